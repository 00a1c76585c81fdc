//! Seeded SAC training runs with CSV logging and checkpoints.
//!
//! A run directory holds:
//!
//! - `config.toml`: the fully resolved configuration
//! - `training_log.csv`: one row per finished episode
//! - `eval_log.csv`: one row per periodic deterministic evaluation
//! - `checkpoints/step_NNNNNNNNN.ckpt` and `final.ckpt`
//!
//! Nothing time- or host-dependent is written, so equal configs give
//! byte-identical directories.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::{AgentCheckpoint, CheckpointError};
use crate::config::{ConfigError, RunConfig, RunSection};
use crate::control::ControlAction;
use crate::env::{EnvError, QuadEnv, OBS_DIM};
use crate::eval::{step_response, EvalError};
use crate::nn::Scalar;
use crate::replay::{ReplayBuffer, Transition};
use crate::sac::{LossReport, SacAgent, SacError};

pub const TRAINING_LOG: &str = "training_log.csv";
pub const EVAL_LOG: &str = "eval_log.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Episodes in the moving reward average.
pub const REWARD_WINDOW: usize = 100;

/// Evaluation episodes count as successes if they end this close to the target, m.
pub const SUCCESS_RADIUS: f64 = 0.15;

pub const TRAINING_LOG_HEADER: [&str; 11] = [
    "step",
    "episode",
    "episode_length",
    "episodic_reward",
    "mean_reward_100",
    "status",
    "critic1_loss",
    "critic2_loss",
    "actor_loss",
    "alpha_loss",
    "alpha",
];

pub const EVAL_LOG_HEADER: [&str; 6] =
    ["step", "episodes", "mean_reward", "mean_length", "mean_final_error", "successes"];

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("run directory {0} already exists (pass --force to overwrite)")]
    RunDirExists(PathBuf),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("training diverged at step {step}: {source}")]
    Diverged { step: usize, source: SacError },
    #[error(transparent)]
    Sac(#[from] SacError),
}

/// Creates `dir`, refusing to reuse an existing one unless `force`.
pub fn prepare_run_dir(dir: &Path, force: bool) -> Result<(), TrainError> {
    if dir.exists() {
        if !force {
            return Err(TrainError::RunDirExists(dir.to_path_buf()));
        }
        std::fs::remove_dir_all(dir)?;
    }
    std::fs::create_dir_all(dir.join(CHECKPOINT_DIR))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// Agent steps taken when the episode ended.
    pub step: usize,
    pub episode: usize,
    pub length: usize,
    pub reward: f64,
    pub mean_reward_100: f64,
    pub status: crate::env::EpisodeStatus,
    /// Mean losses over the updates made during the episode.
    pub losses: Option<LossReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub episodes: usize,
    pub mean_reward: f64,
    pub mean_length: f64,
    pub mean_final_error: f64,
    pub successes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainEvent {
    Episode(EpisodeRecord),
    Eval(EvalRecord),
    Checkpoint { step: usize, path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub episodes: usize,
    /// Mean episodic reward over the first and last (up to) 100 episodes.
    pub first_mean_reward_100: f64,
    pub final_mean_reward_100: f64,
    pub mean_episode_length: f64,
    pub final_checkpoint: PathBuf,
}

#[derive(Default)]
struct LossAccumulator {
    sum: [f64; 5],
    count: usize,
}

impl LossAccumulator {
    fn add(&mut self, r: &LossReport) {
        for (s, v) in self.sum.iter_mut().zip([r.critic1, r.critic2, r.actor, r.alpha_loss, r.alpha]) {
            *s += v;
        }
        self.count += 1;
    }

    fn take(&mut self) -> Option<LossReport> {
        if self.count == 0 {
            return None;
        }
        let n = self.count as f64;
        let [critic1, critic2, actor, alpha_loss, alpha] = self.sum.map(|s| s / n);
        *self = Self::default();
        Some(LossReport { critic1, critic2, actor, alpha_loss, alpha })
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn episode_record_fields(r: &EpisodeRecord) -> Vec<String> {
    let l = r.losses;
    vec![
        r.step.to_string(),
        r.episode.to_string(),
        r.length.to_string(),
        r.reward.to_string(),
        r.mean_reward_100.to_string(),
        r.status.to_string(),
        opt(l.map(|l| l.critic1)),
        opt(l.map(|l| l.critic2)),
        opt(l.map(|l| l.actor)),
        opt(l.map(|l| l.alpha_loss)),
        opt(l.map(|l| l.alpha)),
    ]
}

/// Deterministic evaluation episodes on a dedicated environment.
pub fn evaluate_agent<F: Scalar>(
    agent: &SacAgent<F>,
    env: &mut QuadEnv,
    episodes: usize,
    step: usize,
) -> Result<EvalRecord, EvalError> {
    let mut reward = 0.0;
    let mut length = 0.0;
    let mut error = 0.0;
    let mut successes = 0;
    for _ in 0..episodes {
        let out = step_response(agent, env, None)?;
        let final_error = out.log.final_error().unwrap_or(f64::INFINITY);
        reward += out.reward;
        length += (out.log.len() - 1) as f64;
        error += final_error;
        if out.log.is_complete() && final_error < SUCCESS_RADIUS {
            successes += 1;
        }
    }
    let n = episodes.max(1) as f64;
    Ok(EvalRecord {
        step,
        episodes,
        mean_reward: reward / n,
        mean_length: length / n,
        mean_final_error: error / n,
        successes,
    })
}

/// Seed for the periodic-evaluation environment, kept apart from the
/// training streams so evaluation never perturbs training.
pub fn eval_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Runs `cfg` to completion, writing artifacts under `dir` (which must
/// already exist; see [`prepare_run_dir`]).
pub fn train<F: Scalar>(
    cfg: &RunConfig,
    dir: &Path,
    on_event: &mut dyn FnMut(&TrainEvent),
) -> Result<TrainSummary, TrainError> {
    cfg.validate()?;
    // The location is not part of the run's identity.
    let cfg = &RunConfig { run: RunSection { output_dir: None, ..cfg.run.clone() }, ..cfg.clone() };
    std::fs::create_dir_all(dir.join(CHECKPOINT_DIR))?;
    std::fs::write(dir.join(CONFIG_FILE), cfg.to_toml_string())?;

    let settings = cfg.env_settings();
    let space = settings.action_space;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let mut env = QuadEnv::new(settings, rng.random())?;
    let mut eval_env = QuadEnv::new(settings, eval_seed(cfg.run.seed))?;
    let mut agent = SacAgent::<F>::new(cfg.sac.clone(), OBS_DIM, space.dim(), &mut rng)?;
    let mut buffer = ReplayBuffer::new(cfg.sac.buffer_capacity);

    let mut train_log = csv::Writer::from_writer(BufWriter::new(File::create(dir.join(TRAINING_LOG))?));
    train_log.write_record(TRAINING_LOG_HEADER)?;
    let mut eval_log = csv::Writer::from_writer(BufWriter::new(File::create(dir.join(EVAL_LOG))?));
    eval_log.write_record(EVAL_LOG_HEADER)?;

    let mut recent: VecDeque<f64> = VecDeque::with_capacity(REWARD_WINDOW);
    let mut first_rewards: Vec<f64> = Vec::with_capacity(REWARD_WINDOW);
    let mut losses = LossAccumulator::default();
    let mut episode = 0;
    let mut episode_reward = 0.0;
    let mut episode_length = 0;
    let mut total_length = 0;
    let warmup = cfg.sac.learning_starts.max(cfg.sac.batch_size);

    let mut obs = env.reset();
    for step in 1..=cfg.run.total_steps {
        let raw: Vec<f64> = if buffer.len() < warmup {
            (0..space.dim()).map(|_| rng.random_range(-1.0..=1.0)).collect()
        } else {
            agent.sample_action(obs.as_slice(), &mut rng)?.0
        };
        let result = env.step(&ControlAction::from_slice(space, &raw))?;
        if result.observation.is_finite() {
            buffer.push(Transition {
                state: obs.0,
                action: raw,
                reward: result.reward,
                next_state: result.observation.0,
                done: result.status.is_failure(),
            });
        }
        episode_reward += result.reward;
        episode_length += 1;
        obs = result.observation;

        if buffer.len() >= warmup {
            for _ in 0..cfg.sac.updates_per_step {
                let report = agent.update(&buffer, &mut rng).map_err(|source| match source {
                    SacError::NonFiniteLoss(_) => TrainError::Diverged { step, source },
                    other => TrainError::Sac(other),
                })?;
                losses.add(&report);
            }
        }

        if result.status.is_terminal() {
            episode += 1;
            if recent.len() == REWARD_WINDOW {
                recent.pop_front();
            }
            recent.push_back(episode_reward);
            if first_rewards.len() < REWARD_WINDOW {
                first_rewards.push(episode_reward);
            }
            total_length += episode_length;
            let record = EpisodeRecord {
                step,
                episode,
                length: episode_length,
                reward: episode_reward,
                mean_reward_100: recent.iter().sum::<f64>() / recent.len() as f64,
                status: result.status,
                losses: losses.take(),
            };
            train_log.write_record(episode_record_fields(&record))?;
            on_event(&TrainEvent::Episode(record));
            episode_reward = 0.0;
            episode_length = 0;
            obs = env.reset();
        }

        if cfg.run.eval_interval > 0 && step % cfg.run.eval_interval == 0 {
            let record = evaluate_agent(&agent, &mut eval_env, cfg.run.eval_episodes, step)?;
            eval_log.write_record([
                record.step.to_string(),
                record.episodes.to_string(),
                record.mean_reward.to_string(),
                record.mean_length.to_string(),
                record.mean_final_error.to_string(),
                record.successes.to_string(),
            ])?;
            eval_log.flush()?;
            on_event(&TrainEvent::Eval(record));
        }

        if cfg.run.checkpoint_interval > 0 && step % cfg.run.checkpoint_interval == 0 && step < cfg.run.total_steps {
            let path = dir.join(CHECKPOINT_DIR).join(format!("step_{step:09}.ckpt"));
            save_checkpoint(&agent, cfg, step, &rng, &path)?;
            train_log.flush()?;
            on_event(&TrainEvent::Checkpoint { step, path });
        }
    }

    train_log.flush()?;
    let final_checkpoint = dir.join(FINAL_CHECKPOINT);
    save_checkpoint(&agent, cfg, cfg.run.total_steps, &rng, &final_checkpoint)?;
    on_event(&TrainEvent::Checkpoint { step: cfg.run.total_steps, path: final_checkpoint.clone() });

    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(TrainSummary {
        steps: cfg.run.total_steps,
        episodes: episode,
        first_mean_reward_100: mean(&first_rewards),
        final_mean_reward_100: mean(recent.make_contiguous()),
        mean_episode_length: if episode == 0 { f64::NAN } else { total_length as f64 / episode as f64 },
        final_checkpoint,
    })
}

fn save_checkpoint<F: Scalar>(
    agent: &SacAgent<F>,
    cfg: &RunConfig,
    step: usize,
    rng: &ChaCha8Rng,
    path: &Path,
) -> Result<(), TrainError> {
    let ckpt = AgentCheckpoint { agent: agent.clone(), run: cfg.clone(), step: step as u64, rng: Some(rng.clone()) };
    let mut file = BufWriter::new(File::create(path)?);
    ckpt.write_to(&mut file)?;
    file.flush()?;
    Ok(())
}
