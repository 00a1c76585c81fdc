//! Side-by-side comparison of training logs or metrics tables.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

const TRAINING_COLUMNS: [&str; 5] = ["step", "episode_length", "episodic_reward", "mean_reward_100", "status"];
const METRICS_COLUMNS: [&str; 5] = ["label", "sse_x", "sse_y", "sse_z", "rms_error"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogKind {
    Training,
    Metrics,
}

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
        let headers = reader.headers()?.iter().map(str::to_string).collect();
        let rows = reader
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()
            .with_context(|| format!("cannot read {}", path.display()))?;
        Ok(Self { headers, rows })
    }

    fn require(&self, path: &Path, columns: &[&str]) -> Result<()> {
        for c in columns {
            if !self.headers.iter().any(|h| h == c) {
                bail!("schema mismatch in {}: missing column `{c}`", path.display());
            }
        }
        Ok(())
    }

    fn column(&self, name: &str) -> usize {
        self.headers.iter().position(|h| h == name).expect("column checked")
    }

    fn numbers(&self, path: &Path, name: &str) -> Result<Vec<f64>> {
        let c = self.column(name);
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let f = r.get(c).map(String::as_str).unwrap_or("");
                f.parse::<f64>()
                    .map_err(|_| anyhow!("{} line {}: bad number `{f}` in `{name}`", path.display(), i + 2))
            })
            .collect()
    }
}

pub fn detect(path: &Path) -> Result<LogKind> {
    let t = Table::read(path)?;
    Ok(if t.headers.iter().any(|h| h == "sse_x") { LogKind::Metrics } else { LogKind::Training })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingStats {
    pub name: String,
    pub episodes: usize,
    pub steps: f64,
    pub final_mean_reward: f64,
    pub best_mean_reward: f64,
    pub mean_episode_length: f64,
    pub failure_rate: f64,
    /// Step at which `mean_reward_100` first reached each threshold.
    pub steps_to: Vec<Option<f64>>,
}

fn training_stats(path: &Path, name: &str) -> Result<(Table, Vec<f64>, Vec<f64>)> {
    let t = Table::read(path)?;
    t.require(path, &TRAINING_COLUMNS)?;
    let steps = t.numbers(path, "step")?;
    let mean = t.numbers(path, "mean_reward_100")?;
    if steps.is_empty() {
        bail!("{name}: training log has no episodes");
    }
    Ok((t, steps, mean))
}

pub fn compare_training(a: &Path, b: &Path, thresholds: Option<Vec<f64>>) -> Result<(Vec<TrainingStats>, Vec<f64>)> {
    let mut loaded = Vec::new();
    for path in [a, b] {
        let name = path.display().to_string();
        let (t, steps, mean) = training_stats(path, &name)?;
        loaded.push((name, t, steps, mean, path));
    }
    let thresholds = thresholds.unwrap_or_else(|| {
        // Fractions of the lower of the two best averages, so both runs can reach them.
        let shared = loaded
            .iter()
            .map(|(_, _, _, m, _)| m.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .fold(f64::INFINITY, f64::min);
        [0.25, 0.5, 0.75, 1.0].iter().map(|f| f * shared).collect()
    });

    let mut stats = Vec::new();
    for (name, t, steps, mean, path) in loaded {
        let lengths = t.numbers(path, "episode_length")?;
        let status = t.column("status");
        let failures = t
            .rows
            .iter()
            .filter(|r| matches!(r[status].as_str(), "crashed" | "out_of_bounds" | "non_finite"))
            .count();
        let n = steps.len();
        stats.push(TrainingStats {
            name,
            episodes: n,
            steps: steps[n - 1],
            final_mean_reward: mean[n - 1],
            best_mean_reward: mean.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_episode_length: lengths.iter().sum::<f64>() / n as f64,
            failure_rate: failures as f64 / n as f64,
            steps_to: thresholds.iter().map(|&th| mean.iter().position(|&m| m >= th).map(|i| steps[i])).collect(),
        });
    }
    Ok((stats, thresholds))
}

pub fn render_training(stats: &[TrainingStats], thresholds: &[f64]) -> String {
    let mut out = String::new();
    let mut header = vec![
        "run".to_string(),
        "episodes".into(),
        "steps".into(),
        "final_mean_reward_100".into(),
        "best_mean_reward_100".into(),
        "mean_episode_length".into(),
        "failure_rate".into(),
    ];
    header.extend(thresholds.iter().map(|t| format!("steps_to_{t:.1}")));
    writeln!(out, "{}", header.join(",")).unwrap();
    for s in stats {
        let mut row = vec![
            s.name.clone(),
            s.episodes.to_string(),
            s.steps.to_string(),
            s.final_mean_reward.to_string(),
            s.best_mean_reward.to_string(),
            s.mean_episode_length.to_string(),
            s.failure_rate.to_string(),
        ];
        row.extend(s.steps_to.iter().map(|v| v.map_or("never".into(), |v| v.to_string())));
        writeln!(out, "{}", row.join(",")).unwrap();
    }
    out
}

/// The `mean` row of a metrics table, or its only row.
fn metrics_summary(path: &Path) -> Result<Vec<String>> {
    let t = Table::read(path)?;
    t.require(path, &METRICS_COLUMNS)?;
    let label = t.column("label");
    let row = t
        .rows
        .iter()
        .find(|r| r[label] == "mean")
        .or(if t.rows.len() == 1 { t.rows.first() } else { None })
        .ok_or_else(|| anyhow!("{}: no `mean` row", path.display()))?;
    let pick = |c: &str| t.headers.iter().position(|h| h == c).map_or(String::new(), |i| row[i].clone());
    Ok(["sse_x", "sse_y", "sse_z", "rms_error", "settling_time", "overshoot_x", "overshoot_y", "overshoot_z"]
        .iter()
        .map(|c| pick(c))
        .collect())
}

pub fn compare_metrics(a: &Path, b: &Path) -> Result<String> {
    let mut out = String::from(
        "controller,sse_x,sse_y,sse_z,rms_error,settling_time,overshoot_x,overshoot_y,overshoot_z\n",
    );
    for path in [a, b] {
        let cells = metrics_summary(path)?;
        writeln!(out, "{},{}", path.display(), cells.join(",")).unwrap();
    }
    Ok(out)
}

pub fn compare(a: &Path, b: &Path, thresholds: Option<Vec<f64>>) -> Result<String> {
    match detect(a)? {
        LogKind::Metrics => compare_metrics(a, b),
        LogKind::Training => {
            let (stats, thresholds) = compare_training(a, b, thresholds)?;
            Ok(render_training(&stats, &thresholds))
        }
    }
}
