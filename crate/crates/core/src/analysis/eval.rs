//! Evaluation harnesses: repeated rollouts, fusion-mode ablations,
//! zero-shot container shifts and latent-outcome mutual information.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::episode_metric;
use super::mi::{estimate_mi, MiReport};
use crate::config::{RunConfig, TaskId, WorldConfig};
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::parallel;
use crate::policy::train::{train_policy, TrainSet, Trainer};
use crate::policy::{rollout, Policy};
use crate::world::{shift_container, Episode, WorldState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub task: TaskId,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n_trials: usize,
    pub seeds: Vec<u64>,
    pub config_hash: String,
}

impl EvalReport {
    pub fn new(method: &str, task: TaskId, values: Vec<f64>, seeds: Vec<u64>, config_hash: String) -> Self {
        let (mean, std) = mean_std(&values);
        EvalReport {
            method: method.to_string(),
            task,
            n_trials: values.len(),
            values,
            mean,
            std,
            seeds,
            config_hash,
        }
    }

    /// Whether the stored summary matches the per-trial values.
    pub fn is_consistent(&self) -> bool {
        let (m, s) = mean_std(&self.values);
        self.n_trials == self.values.len() && (m - self.mean).abs() < 1e-9 && (s - self.std).abs() < 1e-9
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    (m, (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt())
}

/// Runs `trial` for every seed in parallel and collects the results in
/// seed order.
pub fn run_trials<F>(method: &str, task: TaskId, seeds: &[u64], config_hash: &str, trial: F) -> Result<EvalReport>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs at least one trial".into()));
    }
    let values: Vec<f64> = parallel::install(|| seeds.par_iter().map(|&s| trial(s)).collect::<Result<_>>())?;
    Ok(EvalReport::new(method, task, values, seeds.to_vec(), config_hash.to_string()))
}

/// Rolls `policy` out once per seed in `world` and scores each episode.
pub fn run_eval(policy: &Policy, world: &WorldConfig, seeds: &[u64]) -> Result<EvalReport> {
    if world.task != policy.cfg.world.task {
        return Err(Error::TaskMismatch {
            expected: policy.cfg.world.task.to_string(),
            got: world.task.to_string(),
        });
    }
    run_trials(policy.mode.as_str(), world.task, seeds, &policy.cfg.hash(), |seed| {
        let r = rollout(policy, world, seed, world.max_steps, false)?;
        episode_metric(&r.episode)
    })
}

/// A trained policy per fusion mode with its evaluation.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub trainer: Trainer,
    pub losses: Vec<f64>,
    pub report: EvalReport,
}

/// Trains one policy per mode with otherwise identical settings and
/// evaluates each on the configured seeds.
pub fn ablation_suite(episodes: &[Episode], cfg: &RunConfig, modes: &[FusionMode]) -> Result<Vec<AblationRow>> {
    let seeds = cfg.eval.seed_list();
    let mut rows = Vec::with_capacity(modes.len());
    for &mode in modes {
        let mut c = cfg.clone();
        c.model.fusion = mode.as_str().to_string();
        let data = TrainSet::new(episodes, &c)?;
        let (trainer, losses) = train_policy(&data, &c)?;
        let report = run_eval(&trainer.policy, &c.world, &seeds)?;
        rows.push(AblationRow { trainer, losses, report });
    }
    Ok(rows)
}

/// `(label, holds)` for "hierarchical beats X by the given relative margin"
/// over every other row. Lower metrics are better.
pub fn ordering_flags(reports: &[EvalReport], margin: f64) -> Vec<(String, bool)> {
    let Some(h) = reports.iter().find(|r| r.method == FusionMode::Hierarchical.as_str()) else {
        return Vec::new();
    };
    reports
        .iter()
        .filter(|r| r.method != h.method)
        .map(|r| (format!("hierarchical < {}", r.method), h.mean < r.mean * (1.0 - margin)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationRow {
    /// Container variant, 0 for the base configuration.
    pub variant: u32,
    pub report: EvalReport,
    /// Variant mean minus base mean.
    pub degradation: f64,
}

/// Zero-shot evaluation on shifted containers. Variant 0 stands for the
/// unshifted base world. Returns an empty table for an empty variant list.
pub fn generalization_suite(policy: &Policy, base: &WorldConfig, variants: &[u32], seeds: &[u64]) -> Result<Vec<GeneralizationRow>> {
    if variants.is_empty() {
        return Ok(Vec::new());
    }
    let base_report = run_eval(policy, base, seeds)?;
    variants
        .iter()
        .map(|&v| {
            let report = if v == 0 {
                base_report.clone()
            } else {
                run_eval(policy, &shift_container(base, v)?, seeds)?
            };
            Ok(GeneralizationRow {
                variant: v,
                degradation: report.mean - base_report.mean,
                report,
            })
        })
        .collect()
}

/// Episode outcome used as the information target: the final fill level
/// for pouring, the cabinet score for the latch.
pub fn outcome(state: &WorldState) -> f64 {
    match state {
        WorldState::Pour(s) => s.fill_level,
        WorldState::Latch(s) => super::metrics::latch_score_of(s),
    }
}

/// Latents of every decision step paired with the outcome of their
/// rollout, collected over `seeds`.
pub fn collect_latents(policy: &Policy, world: &WorldConfig, seeds: &[u64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let runs: Vec<_> = parallel::install(|| {
        seeds
            .par_iter()
            .map(|&s| rollout(policy, world, s, world.max_steps, true))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut z = Vec::new();
    let mut y = Vec::new();
    for r in runs {
        let o = outcome(&r.final_state);
        y.extend(std::iter::repeat_n(o, r.latents.len()));
        z.extend(r.latents);
    }
    Ok((z, y))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiRow {
    pub method: String,
    /// The estimate, or why it could not be computed.
    pub result: std::result::Result<MiReport, String>,
}

/// Mutual information between latents and outcome for each named policy.
/// Degenerate rows carry the error instead of failing the whole table.
pub fn mi_suite(policies: &[(&str, &Policy)], world: &WorldConfig, seeds: &[u64], k: usize, d_reduce: usize) -> Result<Vec<MiRow>> {
    policies
        .iter()
        .map(|&(name, policy)| {
            let (z, y) = collect_latents(policy, world, seeds)?;
            let result = estimate_mi(&z, &y, k, d_reduce)
                .map(|mi| MiReport {
                    method: name.to_string(),
                    k,
                    d_reduce,
                    n_samples: y.len(),
                    mi,
                })
                .map_err(|e| e.to_string());
            Ok(MiRow {
                method: name.to_string(),
                result,
            })
        })
        .collect()
}
