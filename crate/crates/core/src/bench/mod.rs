//! Evaluation protocol, ablation sweeps and exports.
//!
//! Episode `e` of an evaluation with seed `s` is sampled with
//! `derive(s, [e])`, so every cell of an ablation sees the same draws.
//! Episodes may run on several workers; records are gathered in episode
//! order before any statistic is computed, which makes reports independent
//! of the worker count.

mod ablation;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use ablation::{
    export_mi_distribution, run_ablation, write_ablation_csv, write_ablation_episodes_csv, AblationCell, AblationResult, AblationSpec, Axis,
    CellSummary,
};

use crate::augment::Pipeline;
use crate::episodes::{sample_episode, Dataset, EpisodeSpec, Split};
use crate::model::Model;
use crate::refine::refine_episode;
use crate::{seeds, Result};

/// `1.96 · s / √n` with the sample standard deviation; zero for `n < 2`.
pub fn ci95(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    1.96 * var.sqrt() / (n as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub seed: u64,
    pub fingerprint: String,
    pub correct: usize,
    pub total: usize,
    /// Percentage.
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Percentage.
    pub mean_accuracy: f64,
    /// Percentage half-width.
    pub ci95: f64,
    pub n: usize,
    pub seed: u64,
    pub config_fingerprint: String,
    pub episodes: Vec<EpisodeRecord>,
}

impl EvalReport {
    pub fn from_records(episodes: Vec<EpisodeRecord>, seed: u64) -> Self {
        let acc: Vec<f64> = episodes.iter().map(|r| r.accuracy).collect();
        let mean = if acc.is_empty() { 0.0 } else { acc.iter().sum::<f64>() / acc.len() as f64 };
        Self {
            mean_accuracy: mean,
            ci95: ci95(&acc),
            n: acc.len(),
            seed,
            config_fingerprint: String::new(),
            episodes,
        }
    }
}

/// Where and how many episodes to evaluate.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPlan {
    pub split: Split,
    pub episode: EpisodeSpec,
    pub episodes: usize,
    pub seed: u64,
    pub workers: usize,
}

/// Accuracy of one episode.
pub fn evaluate_episode(
    model: &Model,
    dataset: &Dataset,
    pipeline: &Pipeline,
    plan: &EvalPlan,
    e: usize,
) -> Result<EpisodeRecord> {
    let seed = seeds::derive(plan.seed, &[e as u64]);
    let episode = sample_episode(dataset, plan.split, &plan.episode, seed)?;
    let inputs = model.prepare(&episode, pipeline)?;
    let out = refine_episode(model, &inputs)?;
    let labels = episode.query_labels();
    let correct = out.predictions.iter().zip(&labels).filter(|(p, l)| p == l).count();
    Ok(EpisodeRecord {
        episode: e,
        seed,
        fingerprint: episode.fingerprint(),
        correct,
        total: labels.len(),
        accuracy: 100.0 * correct as f64 / labels.len() as f64,
    })
}

/// Runs `f` over `0..n` on `workers` threads and returns results in index
/// order.
pub(crate) fn map_indexed<T: Send>(n: usize, workers: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    if workers > 1 && n > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| crate::Error::Usage(format!("worker pool: {e}")))?;
        return pool.install(|| (0..n).into_par_iter().map(&f).collect());
    }
    let _ = workers;
    (0..n).map(f).collect()
}

pub fn evaluate(model: &Model, dataset: &Dataset, pipeline: &Pipeline, plan: &EvalPlan) -> Result<EvalReport> {
    pipeline.mode_compatible(dataset.mode())?;
    let records = map_indexed(plan.episodes, plan.workers, |e| {
        evaluate_episode(model, dataset, pipeline, plan, e)
    })?;
    Ok(EvalReport::from_records(records, plan.seed))
}

/// Writes `cell,episode,seed,fingerprint,correct,total,accuracy` rows.
pub fn write_episode_csv(rows: &[(String, &EvalReport)], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "cell,episode,seed,fingerprint,correct,total,accuracy")?;
    for (cell, report) in rows {
        for r in &report.episodes {
            writeln!(
                w,
                "{},{},{},{},{},{},{:?}",
                cell, r.episode, r.seed, r.fingerprint, r.correct, r.total, r.accuracy
            )?;
        }
    }
    Ok(())
}

/// Default worker count: `FEWSHOT_WORKERS` if set, else the number of
/// available cores.
pub fn default_workers() -> usize {
    std::env::var("FEWSHOT_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&w: &usize| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}
