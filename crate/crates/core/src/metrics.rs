//! Episode/update bookkeeping and deterministic run artifacts.
//!
//! Every file this module writes is a pure function of the run's inputs:
//! no timestamps, no map-ordered iteration, floats printed with Rust's
//! shortest round-trip formatting. Two runs with identical configuration and
//! seed produce byte-identical artifacts.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Magic first line of `metrics.csv`, so readers can sanity-check the format.
pub const METRICS_HEADER_COMMENT: &str = "# swarmlink.metrics v1";

/// Per-episode scalars logged during training and evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Discounted return of the episode from its first slot.
    pub discounted_return: f64,
    /// Undiscounted sum of rewards.
    pub reward_sum: f64,
    /// Jain fairness of cumulative per-user rates at the final slot.
    pub final_fairness: f64,
    /// Total propulsion energy over the episode, joules.
    pub energy_j: f64,
    /// Mean per-slot fairness-weighted efficiency, kbits/J.
    pub eta_mean: f64,
    /// Episode-level efficiency: fair throughput summed over slots divided
    /// by total energy, kbits/J.
    pub eta_episode: f64,
    /// Total separation violations (pair-slots).
    pub violations: usize,
    pub steps: usize,
}

impl EpisodeRecord {
    pub const CSV_HEADER: &'static str = "episode,discounted_return,reward_sum,final_fairness,energy_j,eta_mean,eta_episode,violations,steps";

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.episode,
            self.discounted_return,
            self.reward_sum,
            self.final_fairness,
            self.energy_j,
            self.eta_mean,
            self.eta_episode,
            self.violations,
            self.steps
        )
    }
}

/// Diagnostics for one optimization phase (one filled buffer).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub update: usize,
    /// Transitions in the buffer when the update ran.
    pub transitions: usize,
    pub minibatches: usize,
    /// Mean importance ratio over the first minibatch (before any step).
    pub first_mean_ratio: f64,
    /// Fraction of first-minibatch samples outside the clip band.
    pub first_clip_fraction: f64,
    pub mean_policy_loss: f64,
    pub mean_value_loss: f64,
    pub mean_entropy: f64,
    pub mean_actor_grad_norm: f64,
    pub mean_critic_grad_norm: f64,
}

impl UpdateStats {
    pub const CSV_HEADER: &'static str = "update,transitions,minibatches,first_mean_ratio,first_clip_fraction,mean_policy_loss,mean_value_loss,mean_entropy,mean_actor_grad_norm,mean_critic_grad_norm";

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.update,
            self.transitions,
            self.minibatches,
            self.first_mean_ratio,
            self.first_clip_fraction,
            self.mean_policy_loss,
            self.mean_value_loss,
            self.mean_entropy,
            self.mean_actor_grad_norm,
            self.mean_critic_grad_norm
        )
    }
}

/// Aggregate of a batch of episodes (typically an evaluation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub label: String,
    pub episodes: usize,
    pub mean_discounted_return: f64,
    pub std_discounted_return: f64,
    pub mean_reward_sum: f64,
    pub mean_final_fairness: f64,
    pub mean_energy_j: f64,
    pub mean_eta_episode: f64,
    pub mean_violations: f64,
}

/// Builds a [`Summary`] (population standard deviation).
pub fn run_summary(label: &str, records: &[EpisodeRecord]) -> Summary {
    let n = records.len().max(1) as f64;
    let mean = |f: &dyn Fn(&EpisodeRecord) -> f64| records.iter().map(|r| f(r)).sum::<f64>() / n;
    let mean_return = mean(&|r| r.discounted_return);
    let var = records
        .iter()
        .map(|r| (r.discounted_return - mean_return).powi(2))
        .sum::<f64>()
        / n;
    Summary {
        schema_version: 1,
        label: label.to_string(),
        episodes: records.len(),
        mean_discounted_return: mean_return,
        std_discounted_return: var.sqrt(),
        mean_reward_sum: mean(&|r| r.reward_sum),
        mean_final_fairness: mean(&|r| r.final_fairness),
        mean_energy_j: mean(&|r| r.energy_j),
        mean_eta_episode: mean(&|r| r.eta_episode),
        mean_violations: mean(&|r| r.violations as f64),
    }
}

/// Centered moving average with an odd window. Near the edges the window
/// shrinks symmetrically, so the filter stays unbiased for linear trends.
pub fn smooth(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Invalid(format!(
            "smoothing window must be odd and positive, got {window}"
        )));
    }
    if values.is_empty() {
        return Err(Error::Invalid("cannot smooth an empty series".into()));
    }
    let half = window / 2;
    let out = (0..values.len())
        .map(|i| {
            let r = half.min(i).min(values.len() - 1 - i);
            let slice = &values[i - r..=i + r];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect();
    Ok(out)
}

/// Empirical CDF evaluated at each distinct value: `(v, P[X <= v])`,
/// ascending in `v` (right-continuous step function).
pub fn cdf_points(values: &[f64]) -> Vec<(f64, f64)> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-comparable value in CDF input"));
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let p = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = p,
            _ => out.push((*v, p)),
        }
    }
    out
}

/// Writes one run's artifacts into a directory:
/// `config.json`, `metrics.csv`, `update_stats.csv`, `summary.json`,
/// `cdf_<name>.csv`, `trajectories.json`, optional `trace.jsonl`, and a
/// `checkpoints/` subdirectory.
pub struct RunWriter {
    dir: PathBuf,
}

impl RunWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(RunWriter { dir: dir.to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Path for a named checkpoint, creating `checkpoints/` on first use.
    pub fn checkpoint_path(&self, name: &str) -> Result<PathBuf> {
        let d = self.dir.join("checkpoints");
        fs::create_dir_all(&d)?;
        Ok(d.join(name))
    }

    /// Snapshot of the exact configuration the run used.
    pub fn write_config<T: Serialize>(&self, cfg: &T) -> Result<()> {
        let json = serde_json::to_string_pretty(cfg)
            .map_err(|e| Error::Invalid(format!("cannot serialize config snapshot: {e}")))?;
        fs::write(self.dir.join("config.json"), json + "\n")?;
        Ok(())
    }

    pub fn write_metrics(&self, records: &[EpisodeRecord]) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "{METRICS_HEADER_COMMENT}");
        let _ = writeln!(s, "{}", EpisodeRecord::CSV_HEADER);
        for r in records {
            let _ = writeln!(s, "{}", r.csv_row());
        }
        fs::write(self.dir.join("metrics.csv"), s)?;
        Ok(())
    }

    pub fn write_update_stats(&self, stats: &[UpdateStats]) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "{}", UpdateStats::CSV_HEADER);
        for r in stats {
            let _ = writeln!(s, "{}", r.csv_row());
        }
        fs::write(self.dir.join("update_stats.csv"), s)?;
        Ok(())
    }

    pub fn write_summary(&self, summary: &Summary) -> Result<()> {
        let json = serde_json::to_string_pretty(summary)
            .map_err(|e| Error::Invalid(format!("cannot serialize summary: {e}")))?;
        fs::write(self.dir.join("summary.json"), json + "\n")?;
        Ok(())
    }

    /// `cdf_<name>.csv` with `value,cdf` rows.
    pub fn write_cdf(&self, name: &str, values: &[f64]) -> Result<()> {
        let mut s = String::from("value,cdf\n");
        for (v, p) in cdf_points(values) {
            let _ = writeln!(s, "{v},{p}");
        }
        fs::write(self.dir.join(format!("cdf_{name}.csv")), s)?;
        Ok(())
    }

    /// Per-UAV position polylines from one episode, as JSON
    /// `[[[x,y,z], ...], ...]` indexed by UAV.
    pub fn write_trajectories(&self, trajectories: &[Vec<[f64; 3]>]) -> Result<()> {
        let json = serde_json::to_string(trajectories)
            .map_err(|e| Error::Invalid(format!("cannot serialize trajectories: {e}")))?;
        fs::write(self.dir.join("trajectories.json"), json + "\n")?;
        Ok(())
    }

    /// One JSON object per line; used for optional step-level traces.
    pub fn write_jsonl<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<()> {
        let mut s = String::new();
        for row in rows {
            let line = serde_json::to_string(row)
                .map_err(|e| Error::Invalid(format!("cannot serialize trace row: {e}")))?;
            let _ = writeln!(s, "{line}");
        }
        fs::write(self.dir.join(name), s)?;
        Ok(())
    }
}
