//! Losses and episodic meta-training.
//!
//! `L = L_cls + λ L_gen` where `L_cls` is the cross-entropy of the
//! unaugmented queries scored against the final prototypes and `L_gen` the
//! mean binary cross-entropy between the support gate-weighted scores of
//! the last iteration and one-hot targets. Gradients flow through every
//! refinement iteration.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::Pipeline;
use crate::bench::{evaluate, EvalPlan};
use crate::episodes::{sample_episode, Dataset, EpisodeSpec, Split};
use crate::model::Model;
use crate::numkit::{ParamSet, SgdNesterov, Tape, Tensor};
use crate::refine::{forward, ForwardOptions};
use crate::{seeds, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda: f64,
    pub lr_encoder: f64,
    pub lr_head: f64,
    pub momentum: f64,
    pub episodes: usize,
    /// Validate every this many episodes; 0 validates only at the end.
    pub validation_interval: usize,
    pub validation_episodes: usize,
    /// Rescale the gradient to at most this global L2 norm; 0 disables.
    pub clip_norm: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            lr_encoder: 1e-4,
            lr_head: 1e-3,
            momentum: 0.9,
            episodes: 5000,
            validation_interval: 1000,
            validation_episodes: 600,
            clip_norm: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Config(format!("clip_norm must be >= 0, got {}", self.clip_norm)));
        }
        SgdNesterov::new(self.lr_encoder, self.lr_head, self.momentum).map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub cls: f64,
    pub gen: f64,
}

/// Mean `-ln P(y_j | x_j)` over rows of `scores` (`[q × N]`).
pub fn classification_loss(scores: &Tensor, labels: &[usize]) -> Result<f64> {
    let (q, n) = scores.dims2();
    if labels.len() != q {
        return Err(Error::Dimension(format!("{} labels for {q} score rows", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::Usage(format!("label {l} out of range for {n} classes")));
    }
    Ok(labels.iter().enumerate().map(|(j, &l)| -scores.get(j, l).ln()).sum::<f64>() / q as f64)
}

/// One-hot vector with a 1 at the 1-based position `i`.
pub fn onehot(i: usize, n: usize) -> Result<Vec<f64>> {
    if i < 1 || i > n {
        return Err(Error::Usage(format!("one-hot index {i} outside 1..={n}")));
    }
    let mut v = vec![0.0; n];
    v[i - 1] = 1.0;
    Ok(v)
}

/// Mean element-wise BCE of support weight vectors (`[(N·K) × N]`) against
/// one-hot targets of their 0-based labels.
pub fn generator_loss(weights: &Tensor, labels: &[usize]) -> Result<f64> {
    let (r, n) = weights.dims2();
    if labels.len() != r {
        return Err(Error::Dimension(format!("{} labels for {r} weight rows", labels.len())));
    }
    let mut total = 0.0;
    for (j, &l) in labels.iter().enumerate() {
        let target = onehot(l + 1, n)?;
        for (i, y) in target.iter().enumerate() {
            let w = weights.get(j, i).clamp(1e-7, 1.0 - 1e-7);
            total -= y * w.ln() + (1.0 - y) * (1.0 - w).ln();
        }
    }
    Ok(total / (r * n) as f64)
}

/// λ actually applied for the model's variant.
pub fn effective_lambda(model: &Model, loss: &LossConfig) -> f64 {
    if model.variant().uses_generator_loss() && model.iterations() > 0 {
        loss.lambda
    } else {
        0.0
    }
}

/// Loss of one prepared episode; with `backprop` the gradients are
/// accumulated into the model's gradient buffers.
pub fn episode_loss(
    model: &mut Model,
    inputs: &crate::model::EpisodeInputs,
    lambda: f64,
    backprop: bool,
) -> Result<LossReport> {
    let mut tape = Tape::new();
    let want_gen = lambda > 0.0 || (!backprop && model.iterations() > 0);
    let fw = forward(&mut tape, model, inputs, ForwardOptions { generator_loss: want_gen })?;
    let cls = tape.value(fw.cls_loss).item();
    let gen = fw.gen_loss.map(|g| tape.value(g).item()).unwrap_or(0.0);
    let total_var = match (fw.gen_loss, lambda > 0.0) {
        (Some(g), true) => {
            let s = tape.scale(g, lambda);
            tape.add(fw.cls_loss, s)
        }
        _ => fw.cls_loss,
    };
    let total = tape.value(total_var).item();
    if backprop {
        let grads = tape.backward(total_var)?;
        model.params.absorb(&tape, &grads);
    }
    Ok(LossReport { total, cls, gen })
}

/// Scales all gradients by a common factor so their joint L2 norm is at
/// most `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(params: &mut ParamSet, max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .flat_map(|(_, p)| p.grad.data().iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let f = max_norm / norm;
        for (_, p) in params.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= f);
        }
    }
    norm
}

/// Everything meta-training needs besides the model.
#[derive(Clone, Debug)]
pub struct TrainPlan {
    pub episode: EpisodeSpec,
    pub pipeline: Pipeline,
    pub loss: LossConfig,
    pub seed: u64,
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub episode: usize,
    pub loss: f64,
    pub loss_cls: f64,
    pub loss_gen: f64,
    pub val_accuracy: Option<f64>,
    pub wall_ms: u128,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub episodes: usize,
    pub losses: Vec<f64>,
    /// `(episode, accuracy)` of every validation.
    pub validations: Vec<(usize, f64)>,
    pub best_episode: usize,
    pub best_val_accuracy: f64,
    pub validation_seed: u64,
}

pub fn validation_seed(seed: u64) -> u64 {
    seeds::derive(seed, &[seeds::STREAM_VALIDATION])
}

/// Episodic meta-training. After return `model` holds the parameters with
/// the best validation accuracy (ties keep the earlier checkpoint).
pub fn meta_train(model: &mut Model, dataset: &Dataset, plan: &TrainPlan, log: &mut dyn Write) -> Result<TrainSummary> {
    plan.loss.validate()?;
    plan.pipeline.mode_compatible(dataset.mode())?;
    let opt = SgdNesterov::new(plan.loss.lr_encoder, plan.loss.lr_head, plan.loss.momentum)?;
    let lambda = effective_lambda(model, &plan.loss);
    let val_plan = EvalPlan {
        split: Split::Val,
        episode: plan.episode,
        episodes: plan.loss.validation_episodes,
        seed: validation_seed(plan.seed),
        workers: plan.workers,
    };
    let has_val = !dataset.split_classes(Split::Val).is_empty() && plan.loss.validation_episodes > 0;
    let start = Instant::now();
    let mut summary = TrainSummary {
        episodes: plan.loss.episodes,
        losses: Vec::with_capacity(plan.loss.episodes),
        validations: Vec::new(),
        best_episode: 0,
        best_val_accuracy: f64::NEG_INFINITY,
        validation_seed: val_plan.seed,
    };
    let mut best = model.params.clone();
    let mut validate = |model: &Model, episode: usize, summary: &mut TrainSummary| -> Result<Option<f64>> {
        if !has_val {
            return Ok(None);
        }
        let acc = evaluate(model, dataset, &plan.pipeline, &val_plan)?.mean_accuracy;
        summary.validations.push((episode, acc));
        if acc > summary.best_val_accuracy {
            summary.best_val_accuracy = acc;
            summary.best_episode = episode;
            best = model.params.clone();
        }
        Ok(Some(acc))
    };

    for e in 0..plan.loss.episodes {
        let seed = seeds::derive(plan.seed, &[seeds::STREAM_TRAIN, e as u64]);
        let episode = sample_episode(dataset, Split::Train, &plan.episode, seed)?;
        let inputs = model.prepare(&episode, &plan.pipeline)?;
        model.params.zero_grad();
        let report = episode_loss(model, &inputs, lambda, true)?;
        let finite_grads = model.params.iter().all(|(_, p)| p.grad.is_finite());
        if !report.total.is_finite() || !finite_grads {
            return Err(Error::Divergence {
                episode: e,
                detail: format!("loss {} (cls {}, gen {}), finite gradients: {finite_grads}", report.total, report.cls, report.gen),
            });
        }
        if plan.loss.clip_norm > 0.0 {
            clip_gradients(&mut model.params, plan.loss.clip_norm);
        }
        opt.step(&mut model.params);
        summary.losses.push(report.total);
        let done = e + 1;
        let due = plan.loss.validation_interval > 0 && done % plan.loss.validation_interval == 0;
        let val = if due || done == plan.loss.episodes { validate(model, done, &mut summary)? } else { None };
        let line = LogLine {
            episode: done,
            loss: report.total,
            loss_cls: report.cls,
            loss_gen: report.gen,
            val_accuracy: val,
            wall_ms: start.elapsed().as_millis(),
        };
        let text = serde_json::to_string(&line).expect("log line serializes");
        writeln!(log, "{text}").map_err(|e| Error::io("<training log>", e))?;
    }
    if plan.loss.episodes == 0 {
        validate(model, 0, &mut summary)?;
    }
    if has_val {
        model.params.copy_values_from(&best);
    }
    Ok(summary)
}

/// Mean generator loss of `model` over `n` fixed episodes of `split`.
pub fn probe_generator_loss(
    model: &Model,
    dataset: &Dataset,
    split: Split,
    plan: &TrainPlan,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let mut m = model.clone();
    let mut total = 0.0;
    for e in 0..n {
        let episode = sample_episode(dataset, split, &plan.episode, seeds::derive(seed, &[e as u64]))?;
        let inputs = m.prepare(&episode, &plan.pipeline)?;
        total += episode_loss(&mut m, &inputs, 0.0, false)?.gen;
    }
    Ok(total / n.max(1) as f64)
}
