//! Iterative prototype refinement.
//!
//! Starting from support prototypes `C⁽⁰⁾`, every iteration scores freshly
//! augmented queries, averages the ensemble, measures its mutual
//! information, gates the averaged scores into a weight matrix and
//! recomputes each prototype as a weighted mean of its support embeddings
//! (weight 1) and the unaugmented query embeddings.

mod weightgen;

use serde::Serialize;

pub use weightgen::{GeneratorKind, WeightGenerator};

use crate::model::{EpisodeInputs, Model};
use crate::numkit::{ParamSet, Tape, Tensor, Var};
use crate::uncertainty::{average_and_mi, AvgScores, UncertaintyVector};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prototypes {
    pub values: Tensor,
    pub iteration: usize,
}

/// `w_{i,j}` stored class-major, `[N × q]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightMatrix {
    pub values: Tensor,
    pub iteration: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RefineConfig {
    pub iterations: usize,
}

impl RefineConfig {
    pub fn new(iterations: usize) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::Config("refinement needs at least one iteration".into()));
        }
        Ok(Self { iterations })
    }
}

/// Mean of the `K·members` augmented support embeddings of each class.
/// `support` is `[(N·K·members) × d]`, class-major.
pub fn initial_prototypes(support: &Tensor, n_way: usize, k_shot: usize, members: usize) -> Result<Prototypes> {
    let group = k_shot * members;
    if group == 0 || support.rows() != n_way * group {
        return Err(Error::Dimension(format!(
            "{} support rows for {n_way}-way {k_shot}-shot with {members} members",
            support.rows()
        )));
    }
    let mut tape = Tape::new();
    let s = tape.constant(support.clone());
    let c = tape.group_mean_rows(s, group);
    Ok(Prototypes { values: tape.value(c).clone(), iteration: 0 })
}

/// `W = (h ⊙ P̄)ᵀ` with one gate per query broadcast over classes.
pub fn modulate(gates: &[f64], avg: &AvgScores) -> Result<WeightMatrix> {
    let (q, n) = avg.values.dims2();
    if gates.len() != q {
        return Err(Error::Dimension(format!("{} gates for {q} queries", gates.len())));
    }
    let mut w = vec![0.0; n * q];
    for j in 0..q {
        for i in 0..n {
            w[i * q + j] = gates[j] * avg.values.get(j, i);
        }
    }
    Ok(WeightMatrix { values: Tensor::from_parts(vec![n, q], w), iteration: 0 })
}

pub fn generate_weights(
    gen: &WeightGenerator,
    params: &ParamSet,
    mi: &UncertaintyVector,
    avg: &AvgScores,
) -> Result<WeightMatrix> {
    modulate(&gen.gates(params, &mi.values), avg)
}

/// Weighted-mean update. `support` holds one embedding per support
/// instance (`[(N·K) × d]`, class-major), `queries` the unaugmented query
/// embeddings `[q × d]`.
pub fn update_prototypes(support: &Tensor, k_shot: usize, queries: &Tensor, w: &WeightMatrix) -> Result<Prototypes> {
    let (n, q) = w.values.dims2();
    if support.rows() != n * k_shot || queries.rows() != q || support.cols() != queries.cols() {
        return Err(Error::Dimension("support, query and weight shapes disagree".into()));
    }
    if w.values.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Domain("refinement weights must lie in [0, 1]".into()));
    }
    let mut tape = Tape::new();
    let s = tape.constant(support.clone());
    let x = tape.constant(queries.clone());
    let wt = tape.constant(w.values.transpose());
    let c = weighted_update(&mut tape, s, k_shot, x, wt);
    Ok(Prototypes { values: tape.value(c).clone(), iteration: w.iteration })
}

/// Taped weighted prototype update with `w` given as `[q × N]`.
fn weighted_update(tape: &mut Tape, support: Var, k_shot: usize, queries: Var, w: Var) -> Var {
    let support_sum = tape.group_sum_rows(support, k_shot);
    let wt = tape.transpose(w);
    let pulled = tape.matmul(wt, queries);
    let numer = tape.add(support_sum, pulled);
    let mass = tape.row_sums(wt);
    let denom = tape.add_scalar(mass, k_shot as f64);
    tape.div_col(numer, denom)
}

/// What a forward pass should build besides the prediction path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Support gating at the last iteration for the generator loss.
    pub generator_loss: bool,
}

/// Tape handles produced by [`forward`].
pub struct Forward {
    /// Scores used for prediction, `[q × N]` (true queries only).
    pub prediction: Var,
    /// Mean cross-entropy of the prediction scores.
    pub cls_loss: Var,
    pub gen_loss: Option<Var>,
    /// `C⁽⁰⁾ .. C⁽ᵀ⁾`.
    pub prototypes: Vec<Var>,
    /// Per iteration: `P̄ [q' × N]`, MI `[q' × 1]`, gates `[q' × 1]`,
    /// weights `[q' × N]` (query-major), over queries and unlabeled.
    pub avg: Vec<Var>,
    pub mi: Vec<Var>,
    pub gates: Vec<Var>,
    pub weights: Vec<Var>,
}

fn gate(tape: &mut Tape, model: &Model, mi: Var) -> Var {
    if model.variant().learned_gate() {
        model.generator.forward(tape, &model.params, mi)
    } else {
        let r = tape.value(mi).rows();
        tape.constant(Tensor::ones(&[r, 1]))
    }
}

/// Mean cross-entropy from logits `[r × N]` computed with a per-row shift.
fn cross_entropy_logits(tape: &mut Tape, logits: Var, labels: &[usize]) -> Var {
    let t = tape.value(logits);
    let (r, n) = t.dims2();
    let shift: Vec<f64> = (0..r)
        .flat_map(|i| {
            let m = t.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            std::iter::repeat_n(m, n)
        })
        .collect();
    let shift = tape.constant(Tensor::from_parts(vec![r, n], shift));
    let z = tape.sub(logits, shift);
    let picked = tape.pick_per_row(z, labels);
    let e = tape.exp(z);
    let sums = tape.row_sums(e);
    let lse = tape.ln(sums);
    let per_row = tape.sub(lse, picked);
    tape.mean(per_row)
}

/// Mean of `-ln p_true`, with probabilities floored at `1e-12`.
fn cross_entropy_probs(tape: &mut Tape, probs: Var, labels: &[usize]) -> Var {
    let picked = tape.pick_per_row(probs, labels);
    let floored = tape.clamp(picked, 1e-12, 1.0);
    let ln = tape.ln(floored);
    let m = tape.mean(ln);
    tape.neg(m)
}

/// Element-wise binary cross-entropy against one-hot rows, averaged over
/// all entries. Weights are clamped to `[1e-7, 1 - 1e-7]`.
pub(crate) fn bce_onehot(tape: &mut Tape, w: Var, labels: &[usize]) -> Var {
    let n = tape.value(w).cols();
    let mut y = vec![0.0; labels.len() * n];
    for (r, &l) in labels.iter().enumerate() {
        y[r * n + l] = 1.0;
    }
    let y = Tensor::from_parts(vec![labels.len(), n], y);
    let not_y = y.map(|v| 1.0 - v);
    let wc = tape.clamp(w, 1e-7, 1.0 - 1e-7);
    let ln_w = tape.ln(wc);
    let neg = tape.neg(wc);
    let one_minus = tape.add_scalar(neg, 1.0);
    let ln_1m = tape.ln(one_minus);
    let yv = tape.constant(y);
    let nyv = tape.constant(not_y);
    let a = tape.mul(yv, ln_w);
    let b = tape.mul(nyv, ln_1m);
    let s = tape.add(a, b);
    let m = tape.mean(s);
    tape.neg(m)
}

/// Builds the full episode computation on `tape`.
pub fn forward(tape: &mut Tape, model: &Model, x: &EpisodeInputs, opts: ForwardOptions) -> Result<Forward> {
    let (n, k, m1, q) = (x.n_way, x.k_shot, x.members, x.queries);
    let iterations = model.iterations();
    if x.query_aug.len() < iterations.max(1) {
        return Err(Error::Usage(format!(
            "inputs carry {} augmentation rounds, model needs {}",
            x.query_aug.len(),
            iterations.max(1)
        )));
    }
    let params = &model.params;
    let temp = &model.temperature;

    let s_in = tape.constant(x.support.clone());
    let s_emb = model.encoder.encode(tape, params, s_in);
    crate::metric::check_nonzero_rows(tape.value(s_emb), "support embedding")?;
    let s_avg = tape.group_mean_rows(s_emb, m1);
    let c0 = tape.group_mean_rows(s_emb, k * m1);
    let qp_in = tape.constant(x.query_plain.clone());
    let qp_emb = model.encoder.encode(tape, params, qp_in);
    crate::metric::check_nonzero_rows(tape.value(qp_emb), "query embedding")?;
    let true_idx: Vec<usize> = (0..q).collect();

    let mut fw = Forward {
        prediction: c0,
        cls_loss: c0,
        gen_loss: None,
        prototypes: vec![c0],
        avg: Vec::new(),
        mi: Vec::new(),
        gates: Vec::new(),
        weights: Vec::new(),
    };

    if model.variant() == crate::Variant::Baseline {
        let qa_in = tape.constant(x.query_aug[0].clone());
        let qa = model.encoder.encode(tape, params, qa_in);
        let p = temp.scores(tape, params, qa, c0);
        let (avg, mi) = average_and_mi(tape, p, m1);
        fw.avg.push(avg);
        fw.mi.push(mi);
        let pred = if x.unlabeled > 0 { tape.select_rows(avg, &true_idx) } else { avg };
        fw.prediction = pred;
        fw.cls_loss = cross_entropy_probs(tape, pred, &x.query_labels);
        return Ok(fw);
    }

    let mut c = c0;
    for t in 0..iterations {
        if opts.generator_loss && t + 1 == iterations {
            let p = temp.scores(tape, params, s_emb, c);
            let (avg, mi) = average_and_mi(tape, p, m1);
            let h = gate(tape, model, mi);
            let w = tape.mul_col(avg, h);
            let labels: Vec<usize> = (0..n * k).map(|r| r / k).collect();
            fw.gen_loss = Some(bce_onehot(tape, w, &labels));
        }
        let qa_in = tape.constant(x.query_aug[t].clone());
        let qa = model.encoder.encode(tape, params, qa_in);
        let p = temp.scores(tape, params, qa, c);
        let (avg, mi) = average_and_mi(tape, p, m1);
        let h = gate(tape, model, mi);
        let w = tape.mul_col(avg, h);
        c = weighted_update(tape, s_avg, k, qp_emb, w);
        fw.avg.push(avg);
        fw.mi.push(mi);
        fw.gates.push(h);
        fw.weights.push(w);
        fw.prototypes.push(c);
    }

    let qt = if x.unlabeled > 0 { tape.select_rows(qp_emb, &true_idx) } else { qp_emb };
    let logits = temp.logits(tape, params, qt, c);
    fw.cls_loss = cross_entropy_logits(tape, logits, &x.query_labels);
    fw.prediction = tape.softmax_rows(logits);
    Ok(fw)
}

/// Argmax per row; ties go to the lowest index.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b })
        })
        .collect()
}

/// Values of one refined episode.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefineOutput {
    pub prototypes: Prototypes,
    /// `P̄` of the last iteration over queries and unlabeled instances.
    pub avg: Option<Tensor>,
    /// Prediction scores for the true queries.
    pub scores: Tensor,
    pub predictions: Vec<usize>,
    pub trajectory: Vec<IterationRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub prototypes: Tensor,
    pub mi: Vec<f64>,
    pub gates: Vec<f64>,
    /// `[N × q']`.
    pub weights: Tensor,
}

fn collect(tape: &Tape, fw: &Forward) -> RefineOutput {
    let scores = tape.value(fw.prediction).clone();
    let trajectory = (0..fw.weights.len())
        .map(|t| IterationRecord {
            iteration: t + 1,
            prototypes: tape.value(fw.prototypes[t + 1]).clone(),
            mi: tape.value(fw.mi[t]).data().to_vec(),
            gates: tape.value(fw.gates[t]).data().to_vec(),
            weights: tape.value(fw.weights[t]).transpose(),
        })
        .collect();
    let last = fw.prototypes.len() - 1;
    RefineOutput {
        prototypes: Prototypes { values: tape.value(fw.prototypes[last]).clone(), iteration: last },
        avg: fw.avg.last().map(|&v| tape.value(v).clone()),
        predictions: argmax_rows(&scores),
        scores,
        trajectory,
    }
}

/// Runs the refinement loop of `model` on prepared inputs.
pub fn refine_episode(model: &Model, x: &EpisodeInputs) -> Result<RefineOutput> {
    let mut tape = Tape::new();
    let fw = forward(&mut tape, model, x, ForwardOptions::default())?;
    Ok(collect(&tape, &fw))
}

/// Refinement with the unlabeled instances joining the queries.
pub fn refine_with_unlabeled(model: &Model, x: &EpisodeInputs) -> Result<RefineOutput> {
    if x.unlabeled == 0 {
        return Err(Error::Usage("refine_with_unlabeled needs a non-empty unlabeled set".into()));
    }
    refine_episode(model, x)
}

/// Writes the per-iteration prototypes, MI, gates and weights as JSON.
pub fn write_trajectory(out: &RefineOutput, w: impl std::io::Write) -> Result<()> {
    serde_json::to_writer_pretty(w, &out.trajectory).map_err(|e| Error::Usage(format!("trajectory export: {e}")))
}
