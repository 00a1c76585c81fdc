//! Deterministic rollouts, trajectory logs and tracking metrics.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::control::{ActionSpace, ControlAction};
use crate::dynamics::QuadState;
use crate::env::{EnvError, EpisodeStatus, Observation, QuadEnv};
use crate::nn::Scalar;
use crate::paths::{sample_path, PathError, PathSpec};
use crate::sac::{SacAgent, SacError};

/// Position-error band for settling, m.
pub const SETTLING_BAND: f64 = 0.05;
/// Window at the end of a log averaged for steady-state error, s.
pub const STEADY_STATE_WINDOW: f64 = 1.0;

pub const TRAJECTORY_HEADER: [&str; 15] =
    ["t", "rx", "ry", "rz", "x", "y", "z", "phi", "theta", "psi", "a0", "a1", "a2", "a3", "status"];

pub const METRICS_HEADER: [&str; 13] = [
    "label",
    "sse_x",
    "sse_y",
    "sse_z",
    "overshoot_x",
    "overshoot_y",
    "overshoot_z",
    "settling_time",
    "rms_error",
    "final_error",
    "duration",
    "complete",
    "status",
];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Sac(#[from] SacError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("policy emits {policy} actions but the environment expects {env}")]
    ActionSpace { policy: ActionSpace, env: ActionSpace },
    #[error("step-response metrics need a constant reference")]
    ModeMismatch,
    #[error("trajectory log is empty")]
    EmptyLog,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("log schema: {0}")]
    Schema(String),
}

/// Anything that maps an observation to a raw action in [−1, 1].
pub trait Policy {
    fn action_space(&self) -> ActionSpace;
    fn act(&self, obs: &Observation) -> Result<Vec<f64>, EvalError>;
}

impl<F: Scalar> Policy for SacAgent<F> {
    fn action_space(&self) -> ActionSpace {
        if self.action_dim == 3 {
            ActionSpace::ThrustVector
        } else {
            ActionSpace::Rpm
        }
    }

    fn act(&self, obs: &Observation) -> Result<Vec<f64>, EvalError> {
        Ok(self.deterministic_action(obs.as_slice())?)
    }
}

/// Wraps a closure as a [`Policy`].
pub struct FnPolicy<G> {
    pub space: ActionSpace,
    pub f: G,
}

impl<G: Fn(&Observation) -> Vec<f64>> Policy for FnPolicy<G> {
    fn action_space(&self) -> ActionSpace {
        self.space
    }

    fn act(&self, obs: &Observation) -> Result<Vec<f64>, EvalError> {
        Ok((self.f)(obs))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub reference: [f64; 3],
    pub position: [f64; 3],
    /// Roll, pitch, yaw in rad.
    pub euler: [f64; 3],
    /// Action applied from this row's state; `None` on the last row.
    pub action: Option<Vec<f64>>,
    pub status: EpisodeStatus,
}

impl TrajectoryRow {
    pub fn error(&self) -> Vector3<f64> {
        Vector3::from(self.reference) - Vector3::from(self.position)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryLog {
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Status after the final row.
    pub fn status(&self) -> EpisodeStatus {
        self.rows.last().map_or(EpisodeStatus::Running, |r| r.status)
    }

    pub fn is_complete(&self) -> bool {
        !self.status().is_failure()
    }

    pub fn final_error(&self) -> Option<f64> {
        self.rows.last().map(|r| r.error().norm())
    }

    /// Rigidly shifts positions and references.
    pub fn translated(&self, offset: Vector3<f64>) -> Self {
        let shift = |p: [f64; 3]| (Vector3::from(p) + offset).into();
        TrajectoryLog {
            rows: self
                .rows
                .iter()
                .map(|r| TrajectoryRow { reference: shift(r.reference), position: shift(r.position), ..r.clone() })
                .collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(TRAJECTORY_HEADER)?;
        for r in &self.rows {
            let mut rec: Vec<String> = std::iter::once(r.t)
                .chain(r.reference)
                .chain(r.position)
                .chain(r.euler)
                .map(|v| v.to_string())
                .collect();
            let action = r.action.as_deref().unwrap_or(&[]);
            rec.extend((0..4).map(|i| action.get(i).map_or(String::new(), |v| v.to_string())));
            rec.push(r.status.to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, EvalError> {
        let mut reader = csv::Reader::from_reader(r);
        let headers = reader.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| EvalError::Schema(format!("missing column `{name}`")))
        };
        let idx: Vec<usize> = TRAJECTORY_HEADER.iter().map(|n| col(n)).collect::<Result<_, _>>()?;
        let mut rows = Vec::new();
        for (k, rec) in reader.records().enumerate() {
            let rec = rec?;
            let line = k + 2;
            let num = |i: usize| -> Result<f64, EvalError> {
                let field = rec.get(idx[i]).unwrap_or("");
                field
                    .parse::<f64>()
                    .map_err(|_| EvalError::Schema(format!("line {line}: bad number `{field}` in `{}`", TRAJECTORY_HEADER[i])))
            };
            let mut action = Vec::new();
            for i in 10..14 {
                if rec.get(idx[i]).unwrap_or("").is_empty() {
                    break;
                }
                action.push(num(i)?);
            }
            let status_field = rec.get(idx[14]).unwrap_or("");
            let status = status_field
                .parse()
                .map_err(|e: String| EvalError::Schema(format!("line {line}: {e}")))?;
            rows.push(TrajectoryRow {
                t: num(0)?,
                reference: [num(1)?, num(2)?, num(3)?],
                position: [num(4)?, num(5)?, num(6)?],
                euler: [num(7)?, num(8)?, num(9)?],
                action: (!action.is_empty()).then_some(action),
                status,
            });
        }
        Ok(TrajectoryLog { rows })
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub log: TrajectoryLog,
    /// Sum of environment rewards.
    pub reward: f64,
}

fn row(t: f64, reference: Vector3<f64>, state: &QuadState, status: EpisodeStatus) -> TrajectoryRow {
    TrajectoryRow {
        t,
        reference: reference.into(),
        position: state.position.into(),
        euler: state.euler_angles(),
        action: None,
        status,
    }
}

/// Drives a freshly reset `env` with `policy`, re-targeting it to
/// `reference(t)` before every decision, for at most `steps` decisions.
pub fn rollout<P, G>(policy: &P, env: &mut QuadEnv, mut reference: G, steps: usize) -> Result<Rollout, EvalError>
where
    P: Policy + ?Sized,
    G: FnMut(f64) -> Result<Vector3<f64>, EvalError>,
{
    if policy.action_space() != env.action_space() {
        return Err(EvalError::ActionSpace { policy: policy.action_space(), env: env.action_space() });
    }
    let mut log = TrajectoryLog::default();
    let mut total = 0.0;
    for _ in 0..steps {
        if env.status().is_terminal() {
            break;
        }
        let t = env.time();
        let target = reference(t)?;
        env.set_target(target);
        let raw = policy.act(&env.observation())?;
        let mut r = row(t, target, env.state(), env.status());
        let result = env.step(&ControlAction::from_slice(env.action_space(), &raw))?;
        total += result.reward;
        r.action = Some(raw);
        log.rows.push(r);
    }
    let t = env.time();
    let target = if env.status().is_failure() { env.target() } else { reference(t)? };
    env.set_target(target);
    log.rows.push(row(t, target, env.state(), env.status()));
    Ok(Rollout { log, reward: total })
}

/// One full episode toward a fixed target, from `start` if given or else
/// from the task's reset distribution.
pub fn step_response<P: Policy + ?Sized>(
    policy: &P,
    env: &mut QuadEnv,
    start: Option<(Vector3<f64>, Vector3<f64>)>,
) -> Result<Rollout, EvalError> {
    match start {
        Some((initial, target)) => env.reset_to(QuadState::at_rest(initial), target),
        None => env.reset(),
    };
    let target = env.target();
    let horizon = env.settings().env.max_steps;
    rollout(policy, env, |_| Ok(target), horizon)
}

/// Flies `spec` from rest at its starting point. `env` should allow at
/// least `duration · rate` steps per episode.
pub fn follow_path<P: Policy + ?Sized>(policy: &P, spec: &PathSpec, env: &mut QuadEnv) -> Result<Rollout, EvalError> {
    spec.validate()?;
    let rate = env.settings().env.agent_frequency;
    let steps = (spec.duration() * rate).round() as usize;
    let start = sample_path(spec, 0.0)?;
    env.reset_to(QuadState::at_rest(start), start);
    let duration = spec.duration();
    rollout(policy, env, |t| Ok(sample_path(spec, t.min(duration))?), steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricsMode {
    StepResponse,
    PathTracking,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingMetrics {
    /// Mean |reference − position| per axis over the final second, m.
    pub steady_state_error: [f64; 3],
    /// Step responses only: overshoot as % of the initial per-axis error.
    pub overshoot: Option<[f64; 3]>,
    /// `None` if the error never stays inside the band.
    pub settling_time: Option<f64>,
    pub rms_error: f64,
    pub final_error: f64,
    pub duration: f64,
    /// False when the log ended in a physical failure.
    pub complete: bool,
    pub status: EpisodeStatus,
}

pub fn compute_metrics(log: &TrajectoryLog, mode: MetricsMode) -> Result<TrackingMetrics, EvalError> {
    let rows = &log.rows;
    let first = rows.first().ok_or(EvalError::EmptyLog)?;
    let last = rows.last().ok_or(EvalError::EmptyLog)?;

    let overshoot = match mode {
        MetricsMode::StepResponse => {
            if rows.iter().any(|r| r.reference != first.reference) {
                return Err(EvalError::ModeMismatch);
            }
            let e0 = first.error();
            let mut out = [0.0; 3];
            for (axis, o) in out.iter_mut().enumerate() {
                let initial = e0[axis];
                if initial.abs() < 1e-12 {
                    continue;
                }
                // Positive once the position has passed the reference.
                let beyond = rows
                    .iter()
                    .map(|r| -r.error()[axis] * initial.signum())
                    .fold(0.0, f64::max);
                *o = 100.0 * beyond / initial.abs();
            }
            Some(out)
        }
        MetricsMode::PathTracking => None,
    };

    let window_start = last.t - STEADY_STATE_WINDOW - 1e-9;
    let window: Vec<_> = rows.iter().filter(|r| r.t >= window_start).collect();
    let mut sse = [0.0; 3];
    for r in &window {
        let e = r.error();
        for axis in 0..3 {
            sse[axis] += e[axis].abs();
        }
    }
    sse.iter_mut().for_each(|v| *v /= window.len() as f64);

    let settling_time = match rows.iter().rposition(|r| r.error().norm() > SETTLING_BAND) {
        None => Some(first.t),
        Some(k) if k + 1 < rows.len() => Some(rows[k + 1].t),
        Some(_) => None,
    };

    let rms = (rows.iter().map(|r| r.error().norm_squared()).sum::<f64>() / rows.len() as f64).sqrt();

    Ok(TrackingMetrics {
        steady_state_error: sse,
        overshoot,
        settling_time,
        rms_error: rms,
        final_error: last.error().norm(),
        duration: last.t - first.t,
        complete: log.is_complete(),
        status: log.status(),
    })
}

/// Per-episode metrics plus their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<(String, TrackingMetrics)>,
}

/// Column-wise mean. Settling time averages the settled episodes only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsSummary {
    pub episodes: usize,
    pub steady_state_error: [f64; 3],
    pub overshoot: Option<[f64; 3]>,
    pub settling_time: Option<f64>,
    pub settled: usize,
    pub rms_error: f64,
    pub final_error: f64,
    pub duration: f64,
    pub complete: usize,
}

impl MetricsTable {
    pub fn summary(&self) -> Option<MetricsSummary> {
        let n = self.rows.len();
        if n == 0 {
            return None;
        }
        let mean = |f: &dyn Fn(&TrackingMetrics) -> f64| self.rows.iter().map(|(_, m)| f(m)).sum::<f64>() / n as f64;
        let axes = |f: &dyn Fn(&TrackingMetrics) -> [f64; 3]| [0, 1, 2].map(|a| mean(&|m| f(m)[a]));
        let settled: Vec<f64> = self.rows.iter().filter_map(|(_, m)| m.settling_time).collect();
        let overshoot = self
            .rows
            .iter()
            .all(|(_, m)| m.overshoot.is_some())
            .then(|| axes(&|m| m.overshoot.unwrap_or([0.0; 3])));
        Some(MetricsSummary {
            episodes: n,
            steady_state_error: axes(&|m| m.steady_state_error),
            overshoot,
            settling_time: (!settled.is_empty()).then(|| settled.iter().sum::<f64>() / settled.len() as f64),
            settled: settled.len(),
            rms_error: mean(&|m| m.rms_error),
            final_error: mean(&|m| m.final_error),
            duration: mean(&|m| m.duration),
            complete: self.rows.iter().filter(|(_, m)| m.complete).count(),
        })
    }

    /// One row per episode followed by a `mean` row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut out = csv::Writer::from_writer(w);
        out.write_record(METRICS_HEADER)?;
        for (label, m) in &self.rows {
            let mut rec = vec![label.clone()];
            rec.extend(m.steady_state_error.iter().map(|v| v.to_string()));
            rec.extend((0..3).map(|a| opt(m.overshoot.map(|o| o[a]))));
            rec.push(opt(m.settling_time));
            rec.extend([m.rms_error, m.final_error, m.duration].map(|v| v.to_string()));
            rec.push(m.complete.to_string());
            rec.push(m.status.to_string());
            out.write_record(&rec)?;
        }
        if let Some(s) = self.summary() {
            let mut rec = vec!["mean".to_string()];
            rec.extend(s.steady_state_error.iter().map(|v| v.to_string()));
            rec.extend((0..3).map(|a| opt(s.overshoot.map(|o| o[a]))));
            rec.push(opt(s.settling_time));
            rec.extend([s.rms_error, s.final_error, s.duration].map(|v| v.to_string()));
            rec.push(format!("{}/{}", s.complete, s.episodes));
            rec.push(format!("settled {}/{}", s.settled, s.episodes));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

impl fmt::Display for TrackingMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [x, y, z] = self.steady_state_error;
        write!(f, "sse [{x:.4}, {y:.4}, {z:.4}] m, rms {:.4} m", self.rms_error)?;
        if let Some([ox, oy, oz]) = self.overshoot {
            write!(f, ", overshoot [{ox:.1}, {oy:.1}, {oz:.1}] %")?;
        }
        match self.settling_time {
            Some(t) => write!(f, ", settles at {t:.2} s")?,
            None => write!(f, ", not settled")?,
        }
        if !self.complete {
            write!(f, " ({})", self.status)?;
        }
        Ok(())
    }
}
