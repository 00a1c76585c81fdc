//! Reference paths for trajectory following.

use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::Vector3;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("t = {t} outside [0, {duration}]")]
    OutOfDomain { t: f64, duration: f64 },
    #[error("invalid path: {0}")]
    Invalid(String),
    #[error("cannot read waypoint file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("waypoint file line {line}: {message}")]
    Parse { line: u64, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PathSpec {
    /// Circle of `radius` around a vertical axis, climbing `height` over
    /// `turns` revolutions. The axis sits `radius` to −x of `start`, so the
    /// path begins at `start`.
    Helix { radius: f64, height: f64, turns: f64, duration: f64, start: Vector3<f64> },
    /// Gerono figure-eight at constant height, one lap per `duration`,
    /// crossing itself at `center`.
    Lemniscate { half_width: f64, duration: f64, center: Vector3<f64> },
    /// Piecewise-linear interpolation through timed points; the first time is 0.
    Waypoints(Vec<(f64, Vector3<f64>)>),
}

impl PathSpec {
    pub fn helix() -> Self {
        PathSpec::Helix { radius: 1.0, height: 1.0, turns: 1.0, duration: 10.0, start: Vector3::new(0.0, 0.0, 1.0) }
    }

    pub fn lemniscate() -> Self {
        PathSpec::Lemniscate { half_width: 1.0, duration: 10.0, center: Vector3::new(0.0, 0.0, 1.0) }
    }

    pub fn duration(&self) -> f64 {
        match self {
            PathSpec::Helix { duration, .. } | PathSpec::Lemniscate { duration, .. } => *duration,
            PathSpec::Waypoints(points) => points.last().map_or(0.0, |p| p.0),
        }
    }

    pub fn validate(&self) -> Result<(), PathError> {
        let bad = |m: &str| Err(PathError::Invalid(m.into()));
        match self {
            PathSpec::Helix { radius, height, turns, duration, start } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    return bad("radius must be > 0");
                }
                if !(*duration > 0.0 && duration.is_finite()) {
                    return bad("duration must be > 0");
                }
                if !height.is_finite() || !turns.is_finite() || !start.iter().all(|v| v.is_finite()) {
                    return bad("helix fields must be finite");
                }
            }
            PathSpec::Lemniscate { half_width, duration, center } => {
                if !(*half_width > 0.0 && half_width.is_finite()) {
                    return bad("half_width must be > 0");
                }
                if !(*duration > 0.0 && duration.is_finite()) {
                    return bad("duration must be > 0");
                }
                if !center.iter().all(|v| v.is_finite()) {
                    return bad("center must be finite");
                }
            }
            PathSpec::Waypoints(points) => {
                if points.len() < 2 {
                    return bad("need at least two waypoints");
                }
                if points[0].0 != 0.0 {
                    return bad("first waypoint must be at t = 0");
                }
                if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return bad("waypoint times must increase strictly");
                }
                if points.iter().any(|(t, p)| !t.is_finite() || !p.iter().all(|v| v.is_finite())) {
                    return bad("waypoints must be finite");
                }
            }
        }
        Ok(())
    }

    /// Upper bound on reference speed, m/s.
    pub fn max_speed(&self) -> f64 {
        match self {
            PathSpec::Helix { radius, height, turns, duration, .. } => {
                let w = TAU * turns / duration;
                ((radius * w).powi(2) + (height / duration).powi(2)).sqrt()
            }
            PathSpec::Lemniscate { half_width, duration, .. } => half_width * TAU / duration * 2f64.sqrt(),
            PathSpec::Waypoints(points) => points
                .windows(2)
                .map(|w| (w[1].1 - w[0].1).norm() / (w[1].0 - w[0].0))
                .fold(0.0, f64::max),
        }
    }

    /// Samples at `rate` Hz from 0 through the end, inclusive.
    pub fn sample_times(&self, rate: f64) -> Vec<f64> {
        let n = (self.duration() * rate).round() as usize;
        (0..=n).map(|k| k as f64 / rate).collect()
    }

    pub fn from_waypoint_file(path: &Path) -> Result<Self, PathError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| PathError::Io { path: path.display().to_string(), source })?;
        Self::from_waypoint_csv(&text)
    }

    /// Parses `t,x,y,z` CSV text with a header row.
    pub fn from_waypoint_csv(text: &str) -> Result<Self, PathError> {
        #[derive(Deserialize)]
        struct Row {
            t: f64,
            x: f64,
            y: f64,
            z: f64,
        }

        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| PathError::Parse { line: 1, message: e.to_string() })?.clone();
        for col in ["t", "x", "y", "z"] {
            if !headers.iter().any(|h| h == col) {
                return Err(PathError::Parse { line: 1, message: format!("missing column `{col}`") });
            }
        }
        let mut points = Vec::new();
        for row in reader.deserialize::<Row>() {
            let row = row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                PathError::Parse { line, message: e.to_string() }
            })?;
            points.push((row.t, Vector3::new(row.x, row.y, row.z)));
        }
        let spec = PathSpec::Waypoints(points);
        spec.validate()?;
        Ok(spec)
    }
}

pub fn sample_path(spec: &PathSpec, t: f64) -> Result<Vector3<f64>, PathError> {
    let duration = spec.duration();
    if !(0.0..=duration).contains(&t) {
        return Err(PathError::OutOfDomain { t, duration });
    }
    Ok(match spec {
        PathSpec::Helix { radius, height, turns, duration, start } => {
            let theta = TAU * turns * t / duration;
            Vector3::new(
                start.x + radius * (theta.cos() - 1.0),
                start.y + radius * theta.sin(),
                start.z + height * (t / duration),
            )
        }
        PathSpec::Lemniscate { half_width, duration, center } => {
            let theta = TAU * ((t % duration) / duration);
            let s = theta.sin();
            Vector3::new(center.x + half_width * s, center.y + half_width * s * theta.cos(), center.z)
        }
        PathSpec::Waypoints(points) => {
            let k = points.partition_point(|p| p.0 <= t).clamp(1, points.len() - 1);
            let (t0, p0) = points[k - 1];
            let (t1, p1) = points[k];
            p0 + (p1 - p0) * ((t - t0) / (t1 - t0))
        }
    })
}
