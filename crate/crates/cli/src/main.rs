mod compare;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;

use quadsac::checkpoint::{AgentCheckpoint, CheckpointError};
use quadsac::config::{Overrides, Profile, RunConfig};
use quadsac::control::ActionSpace;
use quadsac::env::{Observation, QuadEnv, TaskSpec};
use quadsac::eval::{
    compute_metrics, follow_path, step_response, EvalError, MetricsMode, MetricsTable, Policy,
};
use quadsac::paths::PathSpec;
use quadsac::train::{prepare_run_dir, train, TrainEvent};

#[derive(Parser)]
#[command(name = "quadsac", version, about = "Train and evaluate SAC quadrotor controllers")]
struct Cli {
    /// Root for default output directories.
    #[arg(long, global = true, env = "QUADSAC_OUTPUT_ROOT", default_value = "runs")]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded SAC training.
    Train(TrainArgs),
    /// Deterministic step-response episodes from a checkpoint.
    Eval(EvalArgs),
    /// Fly a reference path with a checkpoint.
    Follow(FollowArgs),
    /// Compare two training logs or two metrics tables.
    Compare(CompareArgs),
    /// Print the resolved configuration as TOML.
    Config(ConfigArgs),
}

#[derive(Args, Clone)]
struct ConfigFlags {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named training budget: desk, paper-stabilize, paper-track.
    #[arg(long)]
    profile: Option<Profile>,
    /// stabilize or track.
    #[arg(long)]
    task: Option<TaskSpec>,
    /// thrust_vector or rpm.
    #[arg(long)]
    action_space: Option<ActionSpace>,
    /// Total agent steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    learning_starts: Option<usize>,
    #[arg(long)]
    checkpoint_interval: Option<usize>,
    #[arg(long)]
    eval_interval: Option<usize>,
}

impl ConfigFlags {
    fn overrides(&self, out: Option<PathBuf>) -> Overrides {
        Overrides {
            profile: self.profile,
            task: self.task,
            action_space: self.action_space,
            total_steps: self.steps,
            seed: self.seed,
            output_dir: out,
            learning_starts: self.learning_starts,
            checkpoint_interval: self.checkpoint_interval,
            eval_interval: self.eval_interval,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    flags: ConfigFlags,
    /// Comma-separated seeds; each gets its own `seed_N` subdirectory.
    #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
    seeds: Option<Vec<u64>>,
    /// Concurrent runs when several seeds are given.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace an existing output directory.
    #[arg(long)]
    force: bool,
    /// Episodes between progress lines; 0 silences them.
    #[arg(long, default_value_t = 50)]
    progress: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Configuration to evaluate under instead of the checkpoint's own.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    /// Start position x,y,z (requires --target).
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true, requires = "target")]
    initial: Option<Vector3<f64>>,
    /// Target position x,y,z (requires --initial).
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true, requires = "initial")]
    target: Option<Vector3<f64>>,
    /// Seed for sampled initial/target points.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PathPreset {
    Helix,
    Infinity,
}

#[derive(Args)]
struct FollowArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in path.
    #[arg(long, required_unless_present = "path_file", conflicts_with = "path_file")]
    path: Option<PathPreset>,
    /// CSV waypoints with header t,x,y,z.
    #[arg(long)]
    path_file: Option<PathBuf>,
    /// Traversal time for presets, s.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    /// Reward thresholds for steps-to-threshold columns.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    thresholds: Option<Vec<f64>>,
    /// Also write the table to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    #[command(flatten)]
    flags: ConfigFlags,
}

fn parse_point(s: &str) -> Result<Vector3<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, z] if v.iter().all(|c| c.is_finite()) => Ok(Vector3::new(x, y, z)),
        _ => Err(format!("expected three finite numbers x,y,z, got `{s}`")),
    }
}

/// A checkpointed agent in whichever precision it was saved.
enum LoadedAgent {
    F32(AgentCheckpoint<f32>),
    F64(AgentCheckpoint<f64>),
}

impl LoadedAgent {
    fn load(path: &Path) -> Result<Self> {
        match AgentCheckpoint::<f32>::load(path) {
            Ok(c) => Ok(LoadedAgent::F32(c)),
            Err(CheckpointError::Dtype { .. }) => Ok(LoadedAgent::F64(AgentCheckpoint::<f64>::load(path)?)),
            Err(e) => Err(e).with_context(|| format!("cannot load checkpoint {}", path.display())),
        }
    }

    fn run(&self) -> &RunConfig {
        match self {
            LoadedAgent::F32(c) => &c.run,
            LoadedAgent::F64(c) => &c.run,
        }
    }
}

impl Policy for LoadedAgent {
    fn action_space(&self) -> ActionSpace {
        match self {
            LoadedAgent::F32(c) => c.agent.action_space(),
            LoadedAgent::F64(c) => c.agent.action_space(),
        }
    }

    fn act(&self, obs: &Observation) -> Result<Vec<f64>, EvalError> {
        match self {
            LoadedAgent::F32(c) => c.agent.act(obs),
            LoadedAgent::F64(c) => c.agent.act(obs),
        }
    }
}

/// The checkpoint's configuration, or `file` after checking it agrees on the action space.
fn eval_config(agent: &LoadedAgent, file: Option<&Path>) -> Result<RunConfig> {
    let cfg = match file {
        Some(path) => RunConfig::resolve(Some(path), &Overrides::default())?,
        None => agent.run().clone(),
    };
    if cfg.run.action_space != agent.action_space() {
        bail!(
            "checkpoint was trained with action space `{}` but the configuration selects `{}`",
            agent.action_space(),
            cfg.run.action_space
        );
    }
    Ok(cfg)
}

fn output_dir(root: &Path, out: Option<PathBuf>, default_name: String, force: bool) -> Result<PathBuf> {
    let dir = out.unwrap_or_else(|| root.join(default_name));
    if dir.exists() {
        if !force {
            bail!("{} already exists (pass --force to overwrite)", dir.display());
        }
        std::fs::remove_dir_all(&dir)?;
    }
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn checkpoint_stem(path: &Path) -> String {
    path.file_stem().map_or("checkpoint".into(), |s| s.to_string_lossy().into_owned())
}

fn train_one(cfg: RunConfig, dir: PathBuf, force: bool, progress: usize) -> Result<()> {
    prepare_run_dir(&dir, force)?;
    let tag = format!("seed {}", cfg.run.seed);
    eprintln!(
        "[{tag}] training {} / {} for {} steps -> {}",
        cfg.run.task,
        cfg.run.action_space,
        cfg.run.total_steps,
        dir.display()
    );
    let mut on_event = |e: &TrainEvent| match e {
        TrainEvent::Episode(r) if progress > 0 && r.episode % progress == 0 => eprintln!(
            "[{tag}] step {:>8} episode {:>6} reward {:>9.2} mean100 {:>9.2} alpha {}",
            r.step,
            r.episode,
            r.reward,
            r.mean_reward_100,
            r.losses.map_or("-".into(), |l| format!("{:.4}", l.alpha)),
        ),
        TrainEvent::Eval(r) if progress > 0 => eprintln!(
            "[{tag}] eval @ {}: mean reward {:.2}, final error {:.3} m, {}/{} within 0.15 m",
            r.step, r.mean_reward, r.mean_final_error, r.successes, r.episodes
        ),
        _ => {}
    };
    let summary = train::<f32>(&cfg, &dir, &mut on_event)?;
    println!(
        "[{tag}] final 100-episode mean reward: {} ({} episodes, first-100 mean {})",
        summary.final_mean_reward_100, summary.episodes, summary.first_mean_reward_100
    );
    println!("[{tag}] checkpoint: {}", summary.final_checkpoint.display());
    Ok(())
}

fn cmd_train(root: &Path, args: TrainArgs) -> Result<()> {
    let base = RunConfig::resolve(args.flags.config.as_deref(), &args.flags.overrides(args.out.clone()))?;
    let dir = base.run.output_dir.clone().unwrap_or_else(|| {
        root.join(format!("{}_{}", base.run.task, base.run.action_space))
    });
    let Some(seeds) = args.seeds else {
        let dir = if args.out.is_some() { dir } else { dir.join(format!("seed_{}", base.run.seed)) };
        return train_one(base, dir, args.force, args.progress);
    };

    let jobs: Vec<(RunConfig, PathBuf)> = seeds
        .iter()
        .map(|&seed| {
            let mut cfg = base.clone();
            cfg.run.seed = seed;
            (cfg, dir.join(format!("seed_{seed}")))
        })
        .collect();
    for (_, d) in &jobs {
        if d.exists() && !args.force {
            bail!("{} already exists (pass --force to overwrite)", d.display());
        }
    }
    let width = args.jobs.max(1);
    let mut failures = Vec::new();
    for chunk in jobs.chunks(width) {
        let results: Vec<Result<()>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .cloned()
                .map(|(cfg, d)| s.spawn(move || train_one(cfg, d, args.force, args.progress)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
        });
        for ((cfg, _), r) in chunk.iter().zip(results) {
            if let Err(e) = r {
                eprintln!("seed {} failed: {e:#}", cfg.run.seed);
                failures.push(cfg.run.seed);
            }
        }
    }
    if !failures.is_empty() {
        bail!("runs failed for seeds {failures:?}");
    }
    Ok(())
}

fn cmd_eval(root: &Path, args: EvalArgs) -> Result<()> {
    let agent = LoadedAgent::load(&args.checkpoint)?;
    let cfg = eval_config(&agent, args.config.as_deref())?;
    if args.episodes == 0 {
        bail!("--episodes must be > 0");
    }
    let mut env = QuadEnv::new(cfg.env_settings(), args.seed)?;
    let dir = output_dir(root, args.out, format!("eval_{}", checkpoint_stem(&args.checkpoint)), args.force)?;
    let start = args.initial.zip(args.target);

    let mut table = MetricsTable { rows: Vec::new() };
    for k in 0..args.episodes {
        let rollout = step_response(&agent, &mut env, start)?;
        let label = format!("episode_{k:03}");
        rollout.log.save(&dir.join(format!("{label}.csv")))?;
        let m = compute_metrics(&rollout.log, MetricsMode::StepResponse)?;
        println!("{label}: reward {:.2}, {m}", rollout.reward);
        table.rows.push((label, m));
    }
    table.save(&dir.join("metrics.csv"))?;
    if let Some(s) = table.summary() {
        let [x, y, z] = s.steady_state_error;
        println!(
            "mean over {} episodes: sse [{x:.4}, {y:.4}, {z:.4}] m, rms {:.4} m, final error {:.4} m, {}/{} complete",
            s.episodes, s.rms_error, s.final_error, s.complete, s.episodes
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_follow(root: &Path, args: FollowArgs) -> Result<()> {
    let agent = LoadedAgent::load(&args.checkpoint)?;
    let mut cfg = eval_config(&agent, args.config.as_deref())?;
    let (spec, name) = match (args.path, &args.path_file) {
        (_, Some(file)) => (PathSpec::from_waypoint_file(file)?, checkpoint_stem(file)),
        (Some(PathPreset::Helix), None) => (PathSpec::helix(), "helix".to_string()),
        (Some(PathPreset::Infinity), None) => (PathSpec::lemniscate(), "infinity".to_string()),
        (None, None) => bail!("either --path or --path-file is required"),
    };
    let spec = match (spec, args.duration) {
        (PathSpec::Helix { radius, height, turns, start, .. }, Some(duration)) => {
            PathSpec::Helix { radius, height, turns, duration, start }
        }
        (PathSpec::Lemniscate { half_width, center, .. }, Some(duration)) => {
            PathSpec::Lemniscate { half_width, duration, center }
        }
        (PathSpec::Waypoints(_), Some(_)) => bail!("--duration applies to preset paths only"),
        (spec, None) => spec,
    };
    spec.validate()?;
    cfg.env.max_steps = (spec.duration() * cfg.env.agent_frequency).round() as usize;
    let mut env = QuadEnv::new(cfg.env_settings(), 0)?;
    let dir = output_dir(root, args.out, format!("follow_{name}_{}", checkpoint_stem(&args.checkpoint)), args.force)?;

    let rollout = follow_path(&agent, &spec, &mut env)?;
    rollout.log.save(&dir.join("trajectory.csv"))?;
    let m = compute_metrics(&rollout.log, MetricsMode::PathTracking)?;
    MetricsTable { rows: vec![(name.clone(), m)] }.save(&dir.join("metrics.csv"))?;
    println!("{name}: {} samples, {m}", rollout.log.len());
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let table = compare::compare(&args.a, &args.b, args.thresholds)?;
    print!("{table}");
    if let Some(path) = args.csv {
        std::fs::write(&path, &table).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(&cli.output_root, a),
        Command::Eval(a) => cmd_eval(&cli.output_root, a),
        Command::Follow(a) => cmd_follow(&cli.output_root, a),
        Command::Compare(a) => cmd_compare(a),
        Command::Config(a) => RunConfig::resolve(a.flags.config.as_deref(), &a.flags.overrides(None))
            .map(|cfg| print!("{}", cfg.to_toml_string()))
            .map_err(Into::into),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
