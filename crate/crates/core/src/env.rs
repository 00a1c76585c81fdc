//! Episodic hover / position-tracking environment.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    attitude_pid_step, decode_rpm_action, decode_thrust_vector_action, ActionSpace, ControlAction,
    PidGains, PidState,
};
use crate::dynamics::{step_dynamics, MotorCommand, QuadParams, QuadState};

pub const OBS_DIM: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("episode already finished with status {0:?}; call reset")]
    EpisodeFinished(EpisodeStatus),
    #[error("action is for {got} but the environment expects {expected}")]
    ActionSpaceMismatch { expected: ActionSpace, got: ActionSpace },
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),
}

/// (φ, θ, ψ, vx, vy, vz, ωx, ωy, ωz, Δx, Δy, Δz) with Δ = target − position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn position_error(&self) -> Vector3<f64> {
        Vector3::new(self.0[9], self.0[10], self.0[11])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

pub fn observe(state: &QuadState, target: &Vector3<f64>) -> Observation {
    let [roll, pitch, yaw] = state.euler_angles();
    let v = state.velocity;
    let w = state.angular_velocity;
    let d = target - state.position;
    Observation([roll, pitch, yaw, v.x, v.y, v.z, w.x, w.y, w.z, d.x, d.y, d.z])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    /// Weight `a` shared by the rational and Gaussian terms.
    pub scale: f64,
    /// Standard deviation of the Gaussian term, m.
    pub sigma: f64,
    /// Lower bound on the distance fed to the rational term, m.
    pub distance_floor: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self { scale: 7.0, sigma: 0.5, distance_floor: 1e-3 }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.scale > 0.0 && self.sigma > 0.0 && self.distance_floor > 0.0 {
            Ok(())
        } else {
            Err("reward scale, sigma and distance_floor must all be > 0".into())
        }
    }
}

/// Dense distance reward: 1/(a·d) + a/√(2πσ²)·exp(−½(d/σ)²), d = max(‖Δ‖, ε).
pub fn reward(delta: &Vector3<f64>, p: &RewardParams) -> f64 {
    let d = delta.norm().max(p.distance_floor);
    let gauss = p.scale / (2.0 * std::f64::consts::PI * p.sigma * p.sigma).sqrt();
    1.0 / (p.scale * d) + gauss * (-0.5 * (d / p.sigma).powi(2)).exp()
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|i| other.min[i] >= self.min[i] && other.max[i] <= self.max[i])
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.min[i].is_finite() && self.max[i].is_finite() && self.min[i] <= self.max[i])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        Vector3::from_fn(|i, _| {
            if self.max[i] > self.min[i] {
                rng.random_range(self.min[i]..=self.max[i])
            } else {
                self.min[i]
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Hz
    pub agent_frequency: f64,
    pub max_steps: usize,
    pub flight_bounds: Aabb,
    pub init_position_range: Aabb,
    pub target_range: Aabb,
    /// m
    pub crash_altitude: f64,
    /// Roll or pitch magnitude that ends the episode, rad.
    pub attitude_abort: f64,
    /// Reward given on the step that enters a failure state.
    pub crash_penalty: f64,
    /// Half-width of the RPM action band as a fraction of hover speed.
    pub rpm_action_scale: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        let start = Aabb { min: [-1.5, -1.5, 0.5], max: [1.5, 1.5, 1.5] };
        Self {
            agent_frequency: 50.0,
            max_steps: 502,
            flight_bounds: Aabb { min: [-3.0, -3.0, 0.0], max: [3.0, 3.0, 3.0] },
            init_position_range: start,
            target_range: start,
            crash_altitude: 0.02,
            attitude_abort: 1.2,
            crash_penalty: -50.0,
            rpm_action_scale: 0.05,
        }
    }
}

impl EnvConfig {
    pub fn agent_dt(&self) -> f64 {
        1.0 / self.agent_frequency
    }

    /// Physics substeps per agent step; errors unless `physics_dt` divides
    /// the agent period exactly.
    pub fn substeps(&self, params: &QuadParams) -> Result<usize, EnvError> {
        let ratio = self.agent_dt() / params.physics_dt;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 {
            return Err(EnvError::InvalidConfig(format!(
                "physics_dt {} does not divide the agent period {}",
                params.physics_dt,
                self.agent_dt()
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidConfig(m.to_string()));
        if !(self.agent_frequency.is_finite() && self.agent_frequency > 0.0) {
            return bad("agent_frequency must be > 0");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be > 0");
        }
        if !(self.flight_bounds.is_valid() && self.init_position_range.is_valid() && self.target_range.is_valid()) {
            return bad("every box needs finite min <= max");
        }
        if (0..3).any(|i| self.flight_bounds.min[i] >= self.flight_bounds.max[i]) {
            return bad("flight_bounds is degenerate");
        }
        if !self.flight_bounds.contains_box(&self.init_position_range)
            || !self.flight_bounds.contains_box(&self.target_range)
        {
            return bad("init_position_range and target_range must lie inside flight_bounds");
        }
        if !(self.attitude_abort > 0.0) || !self.crash_altitude.is_finite() {
            return bad("attitude_abort must be > 0 and crash_altitude finite");
        }
        if !(self.rpm_action_scale > 0.0 && self.rpm_action_scale < 1.0) {
            return bad("rpm_action_scale must be in (0, 1)");
        }
        if !self.crash_penalty.is_finite() {
            return bad("crash_penalty must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EpisodeStatus {
    Running,
    MaxSteps,
    Crashed,
    OutOfBounds,
    NonFinite,
}

impl EpisodeStatus {
    pub fn is_terminal(self) -> bool {
        self != EpisodeStatus::Running
    }

    /// Physical failure, as opposed to running out of time.
    pub fn is_failure(self) -> bool {
        matches!(self, EpisodeStatus::Crashed | EpisodeStatus::OutOfBounds | EpisodeStatus::NonFinite)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EpisodeStatus::Running => "running",
            EpisodeStatus::MaxSteps => "max_steps",
            EpisodeStatus::Crashed => "crashed",
            EpisodeStatus::OutOfBounds => "out_of_bounds",
            EpisodeStatus::NonFinite => "non_finite",
        }
    }
}

impl fmt::Display for EpisodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EpisodeStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "running" => EpisodeStatus::Running,
            "max_steps" => EpisodeStatus::MaxSteps,
            "crashed" => EpisodeStatus::Crashed,
            "out_of_bounds" => EpisodeStatus::OutOfBounds,
            "non_finite" => EpisodeStatus::NonFinite,
            other => return Err(format!("unknown episode status `{other}`")),
        })
    }
}

/// Failure checks take precedence over the step limit.
pub fn terminal_status(state: &QuadState, step: usize, cfg: &EnvConfig) -> EpisodeStatus {
    if !state.is_finite() {
        return EpisodeStatus::NonFinite;
    }
    let [roll, pitch, _] = state.euler_angles();
    if state.position.z < cfg.crash_altitude || roll.abs() > cfg.attitude_abort || pitch.abs() > cfg.attitude_abort {
        return EpisodeStatus::Crashed;
    }
    if !cfg.flight_bounds.contains(&state.position) {
        return EpisodeStatus::OutOfBounds;
    }
    if step >= cfg.max_steps {
        return EpisodeStatus::MaxSteps;
    }
    EpisodeStatus::Running
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSpec {
    /// Fly to and hold (0, 0, 1).
    Stabilize,
    /// Fly to a target drawn per episode.
    TrackRandom,
}

pub const STABILIZE_TARGET: [f64; 3] = [0.0, 0.0, 1.0];

impl TaskSpec {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskSpec::Stabilize => "stabilize",
            TaskSpec::TrackRandom => "track_random",
        }
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stabilize" => Ok(TaskSpec::Stabilize),
            "track" | "track_random" | "track-random" => Ok(TaskSpec::TrackRandom),
            other => Err(format!("unknown task `{other}` (expected stabilize or track)")),
        }
    }
}

/// Level, motionless start inside `init_position_range`, plus the episode target.
pub fn reset_state<R: Rng + ?Sized>(task: TaskSpec, cfg: &EnvConfig, rng: &mut R) -> (QuadState, Vector3<f64>) {
    let start = cfg.init_position_range.sample(rng);
    let target = match task {
        TaskSpec::Stabilize => Vector3::from(STABILIZE_TARGET),
        TaskSpec::TrackRandom => cfg.target_range.sample(rng),
    };
    (QuadState::at_rest(start), target)
}

/// Everything that stays fixed across episodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSettings {
    pub params: QuadParams,
    pub gains: PidGains,
    pub env: EnvConfig,
    pub reward: RewardParams,
    pub task: TaskSpec,
    pub action_space: ActionSpace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub status: EpisodeStatus,
    /// Some substep asked the mixer for an infeasible allocation.
    pub saturated: bool,
}

pub struct QuadEnv {
    settings: EnvSettings,
    substeps: usize,
    rng: ChaCha8Rng,
    state: QuadState,
    target: Vector3<f64>,
    pid: PidState,
    motor_rpm: [f64; 4],
    step: usize,
    status: EpisodeStatus,
}

impl QuadEnv {
    pub fn new(settings: EnvSettings, seed: u64) -> Result<Self, EnvError> {
        settings.params.validate().map_err(|e| EnvError::InvalidConfig(e.to_string()))?;
        settings.gains.validate().map_err(EnvError::InvalidConfig)?;
        settings.reward.validate().map_err(EnvError::InvalidConfig)?;
        settings.env.validate()?;
        let substeps = settings.env.substeps(&settings.params)?;
        let hover = settings.params.hover_rpm();
        Ok(Self {
            settings,
            substeps,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: QuadState::at_rest(Vector3::from(STABILIZE_TARGET)),
            target: Vector3::from(STABILIZE_TARGET),
            pid: PidState::default(),
            motor_rpm: [hover; 4],
            step: 0,
            // No episode yet: step() must be preceded by a reset.
            status: EpisodeStatus::MaxSteps,
        })
    }

    pub fn settings(&self) -> &EnvSettings {
        &self.settings
    }

    pub fn action_space(&self) -> ActionSpace {
        self.settings.action_space
    }

    /// Starts an episode from the task's initial-state distribution.
    pub fn reset(&mut self) -> Observation {
        let (state, target) = reset_state(self.settings.task, &self.settings.env, &mut self.rng);
        self.reset_to(state, target)
    }

    /// Starts an episode from an explicit state and target.
    pub fn reset_to(&mut self, state: QuadState, target: Vector3<f64>) -> Observation {
        self.state = state;
        self.target = target;
        self.pid = PidState::default();
        self.motor_rpm = [self.settings.params.hover_rpm(); 4];
        self.step = 0;
        self.status = EpisodeStatus::Running;
        self.observation()
    }

    pub fn set_target(&mut self, target: Vector3<f64>) {
        self.target = target;
    }

    pub fn target(&self) -> Vector3<f64> {
        self.target
    }

    pub fn state(&self) -> &QuadState {
        &self.state
    }

    pub fn status(&self) -> EpisodeStatus {
        self.status
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    /// Simulated time since reset, s.
    pub fn time(&self) -> f64 {
        self.step as f64 / self.settings.env.agent_frequency
    }

    pub fn observation(&self) -> Observation {
        observe(&self.state, &self.target)
    }

    pub fn step(&mut self, action: &ControlAction) -> Result<StepResult, EnvError> {
        if self.status.is_terminal() {
            return Err(EnvError::EpisodeFinished(self.status));
        }
        if action.space() != self.settings.action_space {
            return Err(EnvError::ActionSpaceMismatch {
                expected: self.settings.action_space,
                got: action.space(),
            });
        }
        let params = self.settings.params;
        let dt = params.physics_dt;
        let setpoint = match action {
            ControlAction::ThrustVector(raw) => Some(decode_thrust_vector_action(*raw, self.state.euler_angles()[2])),
            ControlAction::RpmDirect(_) => None,
        };
        let direct = match action {
            ControlAction::RpmDirect(raw) => Some(decode_rpm_action(*raw, &params, self.settings.env.rpm_action_scale)),
            ControlAction::ThrustVector(_) => None,
        };
        let lag = if params.motor_time_constant > 0.0 {
            1.0 - (-dt / params.motor_time_constant).exp()
        } else {
            1.0
        };

        let mut saturated = false;
        let mut blew_up = false;
        for _ in 0..self.substeps {
            let command = match (setpoint, direct) {
                (Some(sp), _) => {
                    let out = attitude_pid_step(&self.state, &sp, &self.settings.gains, &self.pid, &params, dt);
                    self.pid = out.state;
                    saturated |= out.saturated;
                    out.command
                }
                (None, Some(cmd)) => cmd,
                (None, None) => unreachable!(),
            };
            for (actual, wanted) in self.motor_rpm.iter_mut().zip(command.rpm) {
                *actual += (wanted - *actual) * lag;
            }
            match step_dynamics(&self.state, &MotorCommand { rpm: self.motor_rpm }, &params) {
                Ok(next) => self.state = next,
                Err(_) => {
                    blew_up = true;
                    break;
                }
            }
        }
        self.step += 1;
        self.status = if blew_up {
            EpisodeStatus::NonFinite
        } else {
            terminal_status(&self.state, self.step, &self.settings.env)
        };
        let observation = self.observation();
        let reward = if self.status.is_failure() {
            self.settings.env.crash_penalty
        } else {
            reward(&observation.position_error(), &self.settings.reward)
        };
        Ok(StepResult { observation, reward, status: self.status, saturated })
    }
}
