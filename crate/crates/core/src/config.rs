//! Run configuration: one TOML file with a section per subsystem.
//!
//! Resolution order is built-in defaults, then the config file, then a
//! named profile, then explicit command-line values.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ActionSpace, PidGains};
use crate::dynamics::QuadParams;
use crate::env::{EnvConfig, EnvSettings, RewardParams, TaskSpec};
use crate::sac::SacConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub task: TaskSpec,
    pub action_space: ActionSpace,
    pub total_steps: usize,
    pub seed: u64,
    /// Agent steps between evaluation rounds; 0 disables them.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Agent steps between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            task: TaskSpec::Stabilize,
            action_space: ActionSpace::ThrustVector,
            total_steps: 300_000,
            seed: 1,
            eval_interval: 25_000,
            eval_episodes: 5,
            checkpoint_interval: 100_000,
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub vehicle: QuadParams,
    pub attitude: PidGains,
    pub env: EnvConfig,
    pub reward: RewardParams,
    pub sac: SacConfig,
    pub run: RunSection,
}

/// Named training budgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// 300 k stabilization steps, sized for a desktop CPU.
    Desk,
    /// 2.75 M stabilization steps.
    PaperStabilize,
    /// 1 M random-target tracking steps.
    PaperTrack,
}

impl Profile {
    fn apply(self, cfg: &mut RunConfig) {
        let (task, steps) = match self {
            Profile::Desk => (TaskSpec::Stabilize, 300_000),
            Profile::PaperStabilize => (TaskSpec::Stabilize, 2_750_000),
            Profile::PaperTrack => (TaskSpec::TrackRandom, 1_000_000),
        };
        cfg.run.task = task;
        cfg.run.total_steps = steps;
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper-stabilize" => Ok(Profile::PaperStabilize),
            "paper-track" => Ok(Profile::PaperTrack),
            other => Err(format!("unknown profile `{other}` (desk, paper-stabilize, paper-track)")),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::PaperStabilize => "paper-stabilize",
            Profile::PaperTrack => "paper-track",
        })
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub profile: Option<Profile>,
    pub task: Option<TaskSpec>,
    pub action_space: Option<ActionSpace>,
    pub total_steps: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub learning_starts: Option<usize>,
    pub checkpoint_interval: Option<usize>,
    pub eval_interval: Option<usize>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_toml_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("RunConfig serializes to TOML")
    }

    /// Defaults, then `file` if given, then `overrides`; validated.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut cfg = match file {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(p) = o.profile {
            p.apply(self);
        }
        if let Some(v) = o.task {
            self.run.task = v;
        }
        if let Some(v) = o.action_space {
            self.run.action_space = v;
        }
        if let Some(v) = o.total_steps {
            self.run.total_steps = v;
        }
        if let Some(v) = o.seed {
            self.run.seed = v;
        }
        if let Some(v) = &o.output_dir {
            self.run.output_dir = Some(v.clone());
        }
        if let Some(v) = o.learning_starts {
            self.sac.learning_starts = v;
        }
        if let Some(v) = o.checkpoint_interval {
            self.run.checkpoint_interval = v;
        }
        if let Some(v) = o.eval_interval {
            self.run.eval_interval = v;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        self.vehicle.validate().map_err(|e| invalid(e.to_string()))?;
        self.attitude.validate().map_err(invalid)?;
        self.env.validate().map_err(|e| invalid(e.to_string()))?;
        self.env.substeps(&self.vehicle).map_err(|e| invalid(e.to_string()))?;
        self.reward.validate().map_err(invalid)?;
        self.sac.validate().map_err(|e| invalid(e.to_string()))?;
        if self.run.total_steps == 0 {
            return Err(invalid("total_steps must be > 0".into()));
        }
        if self.run.eval_interval > 0 && self.run.eval_episodes == 0 {
            return Err(invalid("eval_episodes must be > 0 when eval_interval is set".into()));
        }
        Ok(())
    }

    pub fn env_settings(&self) -> EnvSettings {
        EnvSettings {
            params: self.vehicle,
            gains: self.attitude,
            env: self.env,
            reward: self.reward,
            task: self.run.task,
            action_space: self.run.action_space,
        }
    }
}
