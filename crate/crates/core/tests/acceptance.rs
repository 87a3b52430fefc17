//! Acceptance suite. Prints one PASS/FAIL line per criterion. Failures are
//! reported but only turn into a non-zero exit status when
//! `ACCEPTANCE_STRICT=1` is set, so the workspace test run stays usable while
//! the full report lands in its output.

use std::time::{Duration, Instant};

use fewshot_core::augment::Pipeline;
use fewshot_core::bench::{ci95, evaluate, run_ablation, write_episode_csv, AblationSpec, Axis, EvalPlan};
use fewshot_core::cli::RunConfig;
use fewshot_core::embed::Encoder;
use fewshot_core::episodes::{make_synthetic, sample_episode, Dataset, EpisodeSpec, Split, SyntheticDatasetSpec};
use fewshot_core::metric::{ScoreTensor, TemperatureNet};
use fewshot_core::model::EpisodeInputs;
use fewshot_core::numkit::{softmax_slice, ParamSet, Tape, Tensor, Var};
use fewshot_core::refine::{
    forward, generate_weights, initial_prototypes, update_prototypes, ForwardOptions, GeneratorKind,
    WeightGenerator, WeightMatrix,
};
use fewshot_core::train::{meta_train, probe_generator_loss, TrainPlan};
use fewshot_core::uncertainty::{average_scores, entropy, mutual_information, AvgScores};
use fewshot_core::{seeds, Model, ModelConfig, Variant};
use rand::Rng;

const BENCHMARK: &str = include_str!("../../../configs/benchmark.toml");

struct Outcome {
    id: usize,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn report(id: usize, start: Instant, limit: Option<Duration>, pass: bool, detail: String) -> Outcome {
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let detail = match limit {
        Some(l) if !in_time => format!("{detail}; runtime {elapsed:.1?} exceeds {l:?}"),
        _ => detail,
    };
    let o = Outcome { id, pass: pass && in_time, detail, elapsed };
    eprintln!("[criterion {id} finished in {:.1?}]", o.elapsed);
    o
}

fn random_distribution(rng: &mut impl Rng, n: usize, sharp: f64) -> Vec<f64> {
    let z: Vec<f64> = (0..n).map(|_| rng.random_range(-sharp..sharp)).collect();
    softmax_slice(&z)
}

fn two_pass_mi(p: &[Vec<Vec<f64>>], j: usize) -> (f64, f64) {
    let m = p[j].len();
    let n = p[j][0].len();
    let mut avg = vec![0.0; n];
    for member in &p[j] {
        for i in 0..n {
            avg[i] += member[i];
        }
    }
    avg.iter_mut().for_each(|v| *v /= m as f64);
    let h_avg = entropy(&avg).unwrap();
    let h_mean = p[j].iter().map(|d| entropy(d).unwrap()).sum::<f64>() / m as f64;
    (h_avg - h_mean, h_avg)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = seeds::rng(101);
    let (mut worst_oracle, mut worst_bound, mut worst_identical) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    for case in 0..1000 {
        let q = rng.random_range(1..=20);
        let m1 = rng.random_range(1..=8);
        let n = rng.random_range(2..=10);
        let sharp = [0.1, 1.0, 5.0, 30.0][case % 4];
        let p: Vec<Vec<Vec<f64>>> =
            (0..q).map(|_| (0..m1).map(|_| random_distribution(&mut rng, n, sharp)).collect()).collect();
        let st = ScoreTensor::from_nested(&p).unwrap();
        let mi = mutual_information(&st);
        for j in 0..q {
            let (oracle, h_avg) = two_pass_mi(&p, j);
            worst_oracle = worst_oracle.max((mi.values[j] - oracle.max(0.0)).abs());
            let cap = h_avg.min((m1 as f64).ln());
            worst_bound = worst_bound.max(-mi.values[j]).max(mi.values[j] - cap);
        }
        let same: Vec<Vec<Vec<f64>>> = (0..q)
            .map(|_| {
                let d = random_distribution(&mut rng, n, sharp);
                vec![d; m1]
            })
            .collect();
        let mi = mutual_information(&ScoreTensor::from_nested(&same).unwrap());
        worst_identical = mi.values.iter().fold(worst_identical, |a, &v| a.max(v));
    }
    let pass = worst_oracle <= 1e-10 && worst_bound <= 1e-10 && worst_identical < 1e-12;
    report(
        1,
        start,
        Some(Duration::from_secs(5)),
        pass,
        format!(
            "MI identity over 1000 tensors: oracle gap {worst_oracle:.1e}, bound excess {worst_bound:.1e}, identical members {worst_identical:.1e}"
        ),
    )
}

/// Worst relative error `|a - n| / max(|a|, |n|, floor)` of central
/// differences over every coordinate of the named parameters. Coordinates
/// for which `skip(params_plus, params_minus)` holds are left out.
fn fd_check(
    params: &ParamSet,
    f: &dyn Fn(&ParamSet) -> (Tape, Var),
    skip: &dyn Fn(&ParamSet, &ParamSet) -> bool,
) -> (f64, usize) {
    let (tape, out) = f(params);
    let grads = tape.backward(out).unwrap();
    let mut with_grads = params.clone();
    with_grads.zero_grad();
    with_grads.absorb(&tape, &grads);
    let h = 1e-5;
    let (mut worst, mut checked) = (0.0f64, 0);
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in &names {
        let base = params.value(name).unwrap().clone();
        for i in 0..base.len() {
            let shifted = |delta: f64| {
                let mut q = params.clone();
                let mut data = base.data().to_vec();
                data[i] += delta;
                q.set_value(name, Tensor::new(base.shape().to_vec(), data).unwrap()).unwrap();
                q
            };
            let (plus, minus) = (shifted(h), shifted(-h));
            if skip(&plus, &minus) {
                continue;
            }
            let eval = |p: &ParamSet| {
                let (t, o) = f(p);
                t.value(o).item()
            };
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let analytic = with_grads.grad(name).unwrap().data()[i];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (worst, checked)
}

fn jitter(params: &mut ParamSet, rng: &mut impl Rng, scale: f64) {
    let names: Vec<String> = params.names().map(String::from).collect();
    for n in names {
        let v = params.value(&n).unwrap();
        let data = v.data().iter().map(|x| x + rng.random_range(-scale..scale)).collect();
        params.set_value(&n, Tensor::new(v.shape().to_vec(), data).unwrap()).unwrap();
    }
}

fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn weighted_sum(tape: &mut Tape, out: Var, r: &Tensor) -> Var {
    let rv = tape.constant(r.clone());
    let prod = tape.mul(out, rv);
    tape.sum(prod)
}

fn tiny_inputs() -> (Dataset, EpisodeInputs, Pipeline) {
    let ds = make_synthetic(&SyntheticDatasetSpec {
        num_classes: 4,
        instances_per_class: 6,
        feature_dim: 4,
        split_fractions: [1.0, 0.0, 0.0],
        ..Default::default()
    })
    .unwrap();
    let pipe = Pipeline::new(vec![fewshot_core::augment::AugOp::FeatureNoise { sigma: 0.2 }]).unwrap();
    let cfg = ModelConfig { temperature_hidden: vec![4], generator_dim: 4, heads: 2, iterations: 2, ..Default::default() };
    let m = Model::new(cfg, ds.layout(), 0).unwrap();
    let ep = sample_episode(&ds, Split::Train, &EpisodeSpec::new(2, 1, 2), 9).unwrap();
    let x = m.prepare(&ep, &pipe).unwrap();
    (ds, x, pipe)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = seeds::rng(202);
    let never = |_: &ParamSet, _: &ParamSet| false;
    let mut worst = [0.0f64; 5];
    let mut checked = 0;
    let (ds, inputs, _) = tiny_inputs();
    for point in 0..100 {
        // g_φ
        let net = TemperatureNet::new(5, vec![6, 4], 1e-3).unwrap();
        let mut p = ParamSet::new();
        net.init(&mut p, 0.5, &mut rng).unwrap();
        jitter(&mut p, &mut rng, 0.5);
        let x = random_tensor(&mut rng, 3, 5, -1.0, 1.0);
        let r = random_tensor(&mut rng, 3, 1, -1.0, 1.0);
        let f = |ps: &ParamSet| {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let g = net.forward(&mut t, ps, xv);
            let o = weighted_sum(&mut t, g, &r);
            (t, o)
        };
        let (e, c) = fd_check(&p, &f, &never);
        worst[0] = worst[0].max(e);
        checked += c;

        // h_ψ, both variants
        for (slot, kind) in [(1, GeneratorKind::MultiAtt), (2, GeneratorKind::Mlp)] {
            let gen = WeightGenerator::new(kind, 6, 2).unwrap();
            let mut p = ParamSet::new();
            gen.init(&mut p, 0.5, &mut rng).unwrap();
            jitter(&mut p, &mut rng, 0.5);
            let q = 1 + point % 7;
            let mi = random_tensor(&mut rng, q, 1, 0.0, 1.5);
            let r = random_tensor(&mut rng, q, 1, -1.0, 1.0);
            let f = |ps: &ParamSet| {
                let mut t = Tape::new();
                let v = t.constant(mi.clone());
                let h = gen.forward(&mut t, ps, v);
                let o = weighted_sum(&mut t, h, &r);
                (t, o)
            };
            let (e, c) = fd_check(&p, &f, &never);
            worst[slot] = worst[slot].max(e);
            checked += c;
        }

        // SmallMlp, skipping coordinates whose perturbation flips a ReLU.
        let enc = Encoder::SmallMlp { input: 5, hidden: vec![6, 4], output: 3 };
        let mut p = ParamSet::new();
        enc.init(&mut p, &mut rng);
        jitter(&mut p, &mut rng, 0.1);
        let x = random_tensor(&mut rng, 4, 5, -1.0, 1.0);
        let r = random_tensor(&mut rng, 4, 3, -1.0, 1.0);
        let f = |ps: &ParamSet| {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let y = enc.encode(&mut t, ps, xv);
            let o = weighted_sum(&mut t, y, &r);
            (t, o)
        };
        let kink = |a: &ParamSet, b: &ParamSet| enc.activation_pattern(a, &x) != enc.activation_pattern(b, &x);
        let (e, c) = fd_check(&p, &f, &kink);
        worst[3] = worst[3].max(e);
        checked += c;

        // Full episode loss L = L_cls + 0.5 L_gen.
        let variant = Variant::ALL[1 + point % 3];
        let cfg = ModelConfig {
            variant,
            temperature_hidden: vec![4, 3],
            generator_dim: 4,
            heads: 2,
            iterations: 2,
            init_temperature: 0.7,
            ..Default::default()
        };
        let mut model = Model::new(cfg, ds.layout(), point as u64).unwrap();
        jitter(&mut model.params, &mut rng, 0.3);
        let f = |ps: &ParamSet| {
            let mut m = model.clone();
            m.params = ps.clone();
            let mut t = Tape::new();
            let fw = forward(&mut t, &m, &inputs, ForwardOptions { generator_loss: true }).unwrap();
            let g = t.scale(fw.gen_loss.unwrap(), 0.5);
            let o = t.add(fw.cls_loss, g);
            (t, o)
        };
        let (e, c) = fd_check(&model.params, &f, &never);
        worst[4] = worst[4].max(e);
        checked += c;
    }
    let pass = worst[..4].iter().all(|&e| e < 1e-4) && worst[4] < 1e-3;
    report(
        2,
        start,
        Some(Duration::from_secs(60)),
        pass,
        format!(
            "gradients at 100 points ({checked} coordinates): g_phi {:.1e}, h_psi multi_att {:.1e}, h_psi mlp {:.1e}, small_mlp {:.1e}, full loss {:.1e}",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = seeds::rng(303);
    let gen = WeightGenerator::new(GeneratorKind::MultiAtt, 8, 2).unwrap();
    let mut gp = ParamSet::new();
    gen.init(&mut gp, 0.5, &mut rng).unwrap();
    jitter(&mut gp, &mut rng, 0.5);
    let mut worst = [0.0f64; 4];
    let mut zero_exact = true;
    for _ in 0..500 {
        let (n, k, m1, q, d) =
            (rng.random_range(1..6), rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..12), rng.random_range(1..7));
        // Ensemble average.
        let p: Vec<Vec<Vec<f64>>> =
            (0..q).map(|_| (0..m1).map(|_| random_distribution(&mut rng, n, 3.0)).collect()).collect();
        let avg = average_scores(&ScoreTensor::from_nested(&p).unwrap());
        for j in 0..q {
            for i in 0..n {
                let mut s = 0.0;
                for member in &p[j] {
                    s += member[i];
                }
                worst[0] = worst[0].max((avg.values.get(j, i) - s / m1 as f64).abs());
            }
        }
        // Gated weights.
        let mi = mutual_information(&ScoreTensor::from_nested(&p).unwrap());
        let h = gen.gates(&gp, &mi.values);
        let w = generate_weights(&gen, &gp, &mi, &AvgScores { values: avg.values.clone() }).unwrap();
        for j in 0..q {
            for i in 0..n {
                worst[1] = worst[1].max((w.values.get(i, j) - h[j] * avg.values.get(j, i)).abs());
            }
        }
        // Weighted update.
        let support = random_tensor(&mut rng, n * k, d, -2.0, 2.0);
        let queries = random_tensor(&mut rng, q, d, -2.0, 2.0);
        let c = update_prototypes(&support, k, &queries, &w).unwrap();
        for i in 0..n {
            for col in 0..d {
                let mut num = 0.0;
                let mut den = k as f64;
                for s in 0..k {
                    num += support.get(i * k + s, col);
                }
                for j in 0..q {
                    num += w.values.get(i, j) * queries.get(j, col);
                    den += w.values.get(i, j);
                }
                worst[2] = worst[2].max((c.values.get(i, col) - num / den).abs());
            }
        }
        let zero = WeightMatrix { values: Tensor::zeros(&[n, q]), iteration: 1 };
        let c = update_prototypes(&support, k, &queries, &zero).unwrap();
        for i in 0..n {
            for col in 0..d {
                let mut s = 0.0;
                for r in 0..k {
                    s += support.get(i * k + r, col);
                }
                zero_exact &= c.values.get(i, col) == s / k as f64;
            }
        }
        // Initial prototypes.
        let aug = random_tensor(&mut rng, n * k * m1, d, -2.0, 2.0);
        let c0 = initial_prototypes(&aug, n, k, m1).unwrap();
        for i in 0..n {
            for col in 0..d {
                let mut s = 0.0;
                for r in i * k * m1..(i + 1) * k * m1 {
                    s += aug.get(r, col);
                }
                worst[3] = worst[3].max((c0.values.get(i, col) - s / (k * m1) as f64).abs());
            }
        }
    }
    let pass = worst.iter().all(|&e| e <= 1e-10) && zero_exact;
    report(
        3,
        start,
        None,
        pass,
        format!(
            "oracles over 500 instances: average {:.1e}, weights {:.1e}, update {:.1e}, initial {:.1e}; zero weights give support mean exactly: {zero_exact}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

struct Trained {
    baseline: Vec<Model>,
    ucn_a: Vec<Model>,
    ucn: Vec<Model>,
    gen_before: Vec<f64>,
    gen_after: Vec<f64>,
    train_time: Duration,
}

fn benchmark() -> (RunConfig, Dataset, Pipeline) {
    let mut cfg = RunConfig::from_toml(BENCHMARK, &[]).unwrap();
    let dataset = cfg.dataset.build().unwrap();
    let pipeline = cfg.resolve(dataset.mode()).unwrap();
    (cfg, dataset, pipeline)
}

const TRAIN_SEEDS: [u64; 3] = [1, 2, 3];

fn train_all(cfg: &RunConfig, ds: &Dataset, pipe: &Pipeline) -> Trained {
    let start = Instant::now();
    let mut t = Trained {
        baseline: vec![],
        ucn_a: vec![],
        ucn: vec![],
        gen_before: vec![],
        gen_after: vec![],
        train_time: Duration::ZERO,
    };
    for seed in TRAIN_SEEDS {
        for variant in [Variant::Baseline, Variant::UcnA, Variant::Ucn] {
            let mut model = Model::new(ModelConfig { variant, ..cfg.model.clone() }, ds.layout(), seed).unwrap();
            let plan = TrainPlan {
                episode: cfg.episode,
                pipeline: pipe.clone(),
                loss: cfg.train.clone(),
                seed,
                workers: 1,
            };
            let probe = |m: &Model| probe_generator_loss(m, ds, Split::Val, &plan, 100, 77).unwrap();
            let before = (variant == Variant::Ucn).then(|| probe(&model));
            let summary = meta_train(&mut model, ds, &plan, &mut std::io::sink()).unwrap();
            eprintln!(
                "  trained {variant} seed {seed}: best validation {:.2}% at episode {}",
                summary.best_val_accuracy, summary.best_episode
            );
            match variant {
                Variant::Baseline => t.baseline.push(model),
                Variant::UcnA => t.ucn_a.push(model),
                _ => {
                    t.gen_before.push(before.unwrap());
                    t.gen_after.push(probe(&model));
                    t.ucn.push(model);
                }
            }
        }
    }
    t.train_time = start.elapsed();
    t
}

fn test_plan(cfg: &RunConfig, episodes: usize, workers: usize) -> EvalPlan {
    EvalPlan { split: Split::Test, episode: cfg.episode, episodes, seed: 2024, workers }
}

fn criterion_4(cfg: &RunConfig, ds: &Dataset, pipe: &Pipeline, t: &Trained) -> Outcome {
    let start = Instant::now();
    let plan = test_plan(cfg, 600, 1);
    let acc = |m: &Model| evaluate(m, ds, pipe, &plan).unwrap().mean_accuracy;
    let base: Vec<f64> = t.baseline.iter().map(acc).collect();
    let ucn_a: Vec<f64> = t.ucn_a.iter().map(acc).collect();
    let ucn: Vec<f64> = t.ucn.iter().map(acc).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let calibrated = base.iter().all(|&b| (65.0..=75.0).contains(&b));
    let gain = ucn.iter().zip(&base).all(|(u, b)| u - b >= 2.0);
    let ordered = mean(&ucn) >= mean(&ucn_a);
    let inversions_ok = ucn.iter().zip(&ucn_a).all(|(u, a)| a - u <= 1.0);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/");
    let elapsed_total = t.train_time + start.elapsed();
    let pass = calibrated && gain && ordered && inversions_ok && elapsed_total <= Duration::from_secs(15 * 60);
    let o = report(
        4,
        start,
        None,
        pass,
        format!(
            "600 paired episodes, seeds 1/2/3: baseline {} (mean {:.2}), UCN_A {} (mean {:.2}), UCN {} (mean {:.2}); baseline in 65-75: {calibrated}; UCN - baseline >= 2: {gain}; mean UCN >= mean UCN_A: {ordered}; inversions <= 1: {inversions_ok}; train+eval {:.0?}",
            fmt(&base),
            mean(&base),
            fmt(&ucn_a),
            mean(&ucn_a),
            fmt(&ucn),
            mean(&ucn),
            elapsed_total
        ),
    );
    Outcome { elapsed: elapsed_total, ..o }
}

fn criterion_5(cfg: &RunConfig, ds: &Dataset, pipe: &Pipeline, t: &Trained) -> Outcome {
    let start = Instant::now();
    let plan = test_plan(cfg, 600, 1);
    let spec = AblationSpec { axis: Axis::TSweep, grid: ["0", "1", "2", "4", "6"].map(String::from).to_vec() };
    let model = t.ucn[0].clone();
    let load = move |_: &str| Ok(model.clone());
    let r = run_ablation(&spec, &load, ds, pipe, &plan).unwrap();
    let acc: Vec<f64> = r.summary.iter().map(|s| s.mean_accuracy).collect();
    let pass = acc[2] >= acc[0] + 1.0 && acc[4] >= acc[2] - 0.5;
    report(
        5,
        start,
        Some(Duration::from_secs(600)),
        pass,
        format!(
            "T sweep (seed 1 UCN, 600 paired episodes): T0 {:.2}, T1 {:.2}, T2 {:.2}, T4 {:.2}, T6 {:.2}",
            acc[0], acc[1], acc[2], acc[3], acc[4]
        ),
    )
}

fn criterion_6(t: &Trained) -> Outcome {
    let start = Instant::now();
    let drops: Vec<f64> = t.gen_before.iter().zip(&t.gen_after).map(|(b, a)| 1.0 - a / b).collect();
    let mean_before = t.gen_before.iter().sum::<f64>() / 3.0;
    let mean_after = t.gen_after.iter().sum::<f64>() / 3.0;
    let pass = drops.iter().all(|&d| d >= 0.5);
    let pairs: Vec<String> =
        t.gen_before.iter().zip(&t.gen_after).map(|(b, a)| format!("{b:.4}->{a:.4}")).collect();
    report(
        6,
        start,
        None,
        pass,
        format!(
            "L_gen at iteration T over 100 validation episodes, lambda 0.5: {} (mean {mean_before:.4}->{mean_after:.4}, decrease {:.0}%)",
            pairs.join(", "),
            100.0 * (1.0 - mean_after / mean_before)
        ),
    )
}

fn criterion_7(cfg: &RunConfig, ds: &Dataset, pipe: &Pipeline, t: &Trained) -> Outcome {
    let start = Instant::now();
    let plan = test_plan(cfg, 600, 1);
    let model = t.ucn[0].clone();
    let load = move |_: &str| Ok(model.clone());
    let spec = AblationSpec { axis: Axis::SemiSupervised, grid: vec!["0".into(), "10".into()] };
    let r = run_ablation(&spec, &load, ds, pipe, &plan).unwrap();
    let sup = evaluate(&t.ucn[0], ds, pipe, &plan).unwrap();
    let bytes = |rep| {
        let mut v = Vec::new();
        write_episode_csv(&[("cell".to_string(), rep)], &mut v).unwrap();
        v
    };
    let identical = bytes(&r.reports[0].1) == bytes(&sup) && r.reports[0].1 == sup;
    let semi = r.reports[1].1.mean_accuracy;
    let pass = identical && semi >= sup.mean_accuracy - 0.5;
    report(
        7,
        start,
        None,
        pass,
        format!(
            "u=0 byte-identical to supervised: {identical}; supervised {:.2}, u=10 per class {:.2} (change {:+.2})",
            sup.mean_accuracy,
            semi,
            semi - sup.mean_accuracy
        ),
    )
}

fn criterion_8(cfg: &RunConfig, ds: &Dataset, pipe: &Pipeline, t: &Trained) -> Outcome {
    let start = Instant::now();
    let model = &t.ucn[0];
    let timed = Instant::now();
    let a = evaluate(model, ds, pipe, &test_plan(cfg, 600, 1)).unwrap();
    let single = timed.elapsed();
    let b = evaluate(model, ds, pipe, &test_plan(cfg, 600, 1)).unwrap();
    let c = evaluate(model, ds, pipe, &test_plan(cfg, 600, 2)).unwrap();
    let d = evaluate(model, ds, pipe, &test_plan(cfg, 600, 4)).unwrap();
    let reproducible = a == b && a == c && a == d;
    let acc: Vec<f64> = a.episodes.iter().map(|r| r.accuracy).collect();
    let ci_gap = (ci95(&acc) - a.ci95).abs();
    let pass = reproducible && ci_gap <= 1e-12 && single < Duration::from_secs(60);
    report(
        8,
        start,
        None,
        pass,
        format!(
            "bit-identical across runs and 1/2/4 workers: {reproducible}; ci95 recomputation gap {ci_gap:.1e}; 600-episode evaluation {single:.1?}"
        ),
    )
}

fn main() {
    let mut outcomes = vec![criterion_1(), criterion_2(), criterion_3()];
    let (cfg, ds, pipe) = benchmark();
    eprintln!("training benchmark models (3 seeds x baseline, UCN_A, UCN)");
    let trained = train_all(&cfg, &ds, &pipe);
    outcomes.push(criterion_4(&cfg, &ds, &pipe, &trained));
    outcomes.push(criterion_5(&cfg, &ds, &pipe, &trained));
    outcomes.push(criterion_6(&trained));
    outcomes.push(criterion_7(&cfg, &ds, &pipe, &trained));
    outcomes.push(criterion_8(&cfg, &ds, &pipe, &trained));

    println!();
    for o in &outcomes {
        println!("criterion {}: {} ({:.1?}) {}", o.id, if o.pass { "PASS" } else { "FAIL" }, o.elapsed, o.detail);
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("acceptance: {} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
