//! Temperature generator `g_φ`, the scaled distance and classification
//! scores.
//!
//! Every point (instance embedding or prototype) is mapped to
//! `x / (‖x‖ g_φ(x))` and scores are the softmax of negative Euclidean
//! distances between mapped points.

use serde::{Deserialize, Serialize};

use crate::numkit::{ParamGroup, ParamSet, Tape, Tensor, Var};
use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Fully connected `d -> hidden... -> 1` network with SiLU hidden units and a
/// `softplus + ε` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureNet {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub epsilon: f64,
}

fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

impl TemperatureNet {
    pub fn new(input: usize, hidden: Vec<usize>, epsilon: f64) -> Result<Self> {
        if input == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("temperature network layers must be non-empty".into()));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("temperature floor must be > 0, got {epsilon}")));
        }
        Ok(Self { input, hidden, epsilon })
    }

    fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input];
        s.extend(&self.hidden);
        s.push(1);
        s
    }

    /// Registers `temp.w{i}`, `temp.b{i}`. The output layer starts at zero
    /// with its bias set so that every input maps to `initial`.
    pub fn init(&self, params: &mut ParamSet, initial: f64, rng: &mut impl rand::Rng) -> Result<()> {
        if initial <= self.epsilon {
            return Err(Error::Config(format!(
                "initial temperature {initial} must exceed the floor {}",
                self.epsilon
            )));
        }
        let sizes = self.sizes();
        let last = sizes.len() - 2;
        for (i, pair) in sizes.windows(2).enumerate() {
            let (w, b) = (format!("temp.w{i}"), format!("temp.b{i}"));
            if i == last {
                params.insert(&w, Tensor::zeros(&[pair[0], 1]), ParamGroup::Head);
                params.insert_bias(&b, 1, inverse_softplus(initial - self.epsilon), ParamGroup::Head);
            } else {
                params.insert_weight(&w, pair[0], pair[1], 1.0, ParamGroup::Head, rng);
                params.insert_bias(&b, pair[1], 0.0, ParamGroup::Head);
            }
        }
        Ok(())
    }

    /// `g_φ` of every row, `[r × d] -> [r × 1]`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Var {
        let layers = self.sizes().len() - 1;
        let mut h = x;
        for i in 0..layers {
            let w = tape.param(params, &format!("temp.w{i}"));
            let b = tape.param(params, &format!("temp.b{i}"));
            let z = tape.matmul(h, w);
            h = tape.add_row(z, b);
            if i + 1 < layers {
                h = tape.silu(h);
            }
        }
        let s = tape.softplus(h);
        tape.add_scalar(s, self.epsilon)
    }

    /// Maps every row to `x / (‖x‖ g_φ(x))`.
    pub fn transform(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Var {
        let g = self.forward(tape, params, x);
        let norm = tape.row_norm(x);
        let scale = tape.mul(norm, g);
        tape.div_col(x, scale)
    }

    /// Negative scaled distances `[r × N]` between rows of `x` and the
    /// prototypes.
    pub fn logits(&self, tape: &mut Tape, params: &ParamSet, x: Var, protos: Var) -> Var {
        let zx = self.transform(tape, params, x);
        let zc = self.transform(tape, params, protos);
        let d = tape.pairwise_distance(zx, zc);
        tape.neg(d)
    }

    /// Softmax scores `[r × N]`.
    pub fn scores(&self, tape: &mut Tape, params: &ParamSet, x: Var, protos: Var) -> Var {
        let l = self.logits(tape, params, x, protos);
        tape.softmax_rows(l)
    }
}

/// Rejects rows whose norm is zero; the scaled distance divides by it.
pub fn check_nonzero_rows(t: &Tensor, what: &str) -> Result<()> {
    for r in 0..t.rows() {
        if t.row(r).iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateInput(format!("{what} row {r} has zero norm")));
        }
    }
    Ok(())
}

pub fn temperature(net: &TemperatureNet, params: &ParamSet, x: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::from_parts(vec![1, x.len()], x.to_vec()));
    let g = net.forward(&mut tape, params, v);
    tape.value(g).item()
}

/// `d_φ(x1, x2)`.
pub fn distance(net: &TemperatureNet, params: &ParamSet, x1: &[f64], x2: &[f64]) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(Error::Dimension(format!("distance of {}- and {}-vectors", x1.len(), x2.len())));
    }
    let pair = Tensor::from_parts(vec![2, x1.len()], [x1, x2].concat());
    check_nonzero_rows(&pair, "distance input")?;
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::from_parts(vec![1, x1.len()], x1.to_vec()));
    let b = tape.constant(Tensor::from_parts(vec![1, x2.len()], x2.to_vec()));
    let za = net.transform(&mut tape, params, a);
    let zb = net.transform(&mut tape, params, b);
    let d = tape.pairwise_distance(za, zb);
    Ok(tape.value(d).item())
}

/// Scores `P(y = i | x_j, A_k)` stored as a `[(q·members) × N]` matrix
/// with rows ordered query-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTensor {
    queries: usize,
    members: usize,
    values: Tensor,
    pub iteration: usize,
}

impl ScoreTensor {
    pub fn new(queries: usize, members: usize, values: Tensor) -> Result<Self> {
        if values.rows() != queries * members || members == 0 || values.cols() == 0 {
            return Err(Error::Dimension(format!(
                "score tensor {:?} does not hold {queries} x {members} rows",
                values.shape()
            )));
        }
        for r in 0..values.rows() {
            let row = values.row(r);
            if row.iter().any(|&p| p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
                return Err(Error::Domain(format!("score row {r} is not a distribution")));
            }
        }
        Ok(Self { queries, members, values, iteration: 0 })
    }

    /// Builds from `[j][k][i]` nested vectors.
    pub fn from_nested(p: &[Vec<Vec<f64>>]) -> Result<Self> {
        let members = p.first().map(|m| m.len()).unwrap_or(0);
        let rows: Vec<&Vec<f64>> = p.iter().flat_map(|m| m.iter()).collect();
        if p.iter().any(|m| m.len() != members) {
            return Err(Error::Dimension("ragged ensemble".into()));
        }
        let t = Tensor::from_rows(&rows)?;
        Self::new(p.len(), members, t)
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn classes(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    /// Distribution of query `j` under augmentation `k`.
    pub fn slice(&self, j: usize, k: usize) -> &[f64] {
        self.values.row(j * self.members + k)
    }
}

/// Scores of `features` (`[(q·members) × d]`, query-major) against
/// `prototypes` (`[N × d]`).
pub fn classify(
    net: &TemperatureNet,
    params: &ParamSet,
    features: &Tensor,
    members: usize,
    prototypes: &Tensor,
) -> Result<ScoreTensor> {
    if members == 0 || features.rows() % members != 0 {
        return Err(Error::Dimension(format!("{} rows are not a multiple of {members}", features.rows())));
    }
    if features.cols() != prototypes.cols() {
        return Err(Error::Dimension("feature and prototype dimensions differ".into()));
    }
    check_nonzero_rows(features, "feature")?;
    check_nonzero_rows(prototypes, "prototype")?;
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let c = tape.constant(prototypes.clone());
    let s = net.scores(&mut tape, params, x, c);
    Ok(ScoreTensor {
        queries: features.rows() / members,
        members,
        values: tape.value(s).clone(),
        iteration: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use crate::testutil::worst_param_error;
    use rand::Rng;

    fn net(d: usize) -> (TemperatureNet, ParamSet) {
        let n = TemperatureNet::new(d, vec![8, 5], DEFAULT_EPSILON).unwrap();
        let mut p = ParamSet::new();
        n.init(&mut p, 1.0, &mut seeds::rng(9)).unwrap();
        (n, p)
    }

    fn randomize(p: &mut ParamSet, seed: u64) {
        let mut rng = seeds::rng(seed);
        let names: Vec<String> = p.names().map(String::from).collect();
        for n in names {
            let cur = p.value(&n).unwrap();
            let v = Tensor::new(cur.shape().to_vec(), (0..cur.len()).map(|_| rng.random_range(-0.8..0.8)).collect()).unwrap();
            p.set_value(&n, v).unwrap();
        }
    }

    #[test]
    fn constant_network_gives_softplus_of_bias() {
        let (n, mut p) = net(3);
        p.set_value("temp.b2", Tensor::full(&[1, 1], 0.7)).unwrap();
        let expected = (1.0 + 0.7f64.exp()).ln() + DEFAULT_EPSILON;
        for x in [[1.0, 2.0, 3.0], [-5.0, 0.0, 9.0]] {
            assert!((temperature(&n, &p, &x) - expected).abs() < 1e-14);
        }
        let (_, p0) = net(3);
        assert!((temperature(&n, &p0, &[1.0, 1.0, 1.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn temperature_is_floored() {
        let (n, mut p) = net(3);
        p.set_value("temp.b2", Tensor::full(&[1, 1], -800.0)).unwrap();
        let g = temperature(&n, &p, &[0.3, 0.1, -2.0]);
        assert!(g >= DEFAULT_EPSILON && g > 0.0);
    }

    #[test]
    fn unit_temperature_distances() {
        let (n, mut p) = net(2);
        p.set_value("temp.b2", Tensor::full(&[1, 1], inverse_softplus(1.0 - DEFAULT_EPSILON))).unwrap();
        assert!((distance(&n, &p, &[1.0, 0.0], &[0.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let th = 0.7f64;
        let d = distance(&n, &p, &[1.0, 0.0], &[th.cos(), th.sin()]).unwrap();
        assert!((d - (2.0 - 2.0 * th.cos()).sqrt()).abs() < 1e-12);
        assert_eq!(distance(&n, &p, &[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert!(matches!(distance(&n, &p, &[0.0, 0.0], &[1.0, 0.0]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn distance_matches_scalar_formula_and_is_a_metric() {
        let (n, mut p) = net(4);
        randomize(&mut p, 21);
        let mut rng = seeds::rng(22);
        let mut v = || (0..4).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
        for _ in 0..50 {
            let (a, b, c) = (v(), v(), v());
            let mapped = |x: &[f64]| {
                let norm = x.iter().map(|t| t * t).sum::<f64>().sqrt();
                let g = temperature(&n, &p, x);
                x.iter().map(|t| t / (norm * g)).collect::<Vec<f64>>()
            };
            let (ma, mb) = (mapped(&a), mapped(&b));
            let oracle = ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let dab = distance(&n, &p, &a, &b).unwrap();
            assert!((dab - oracle).abs() < 1e-12);
            assert_eq!(dab, distance(&n, &p, &b, &a).unwrap());
            let (dac, dbc) = (distance(&n, &p, &a, &c).unwrap(), distance(&n, &p, &b, &c).unwrap());
            assert!(dac <= dab + dbc + 1e-12);
        }
    }

    #[test]
    fn two_way_scores() {
        let s = crate::numkit::softmax_slice(&[-0.5, -1.5]);
        assert!((s[0] - 0.7310585786300049).abs() < 1e-12);
        assert!((s[1] - 0.2689414213699951).abs() < 1e-12);
    }

    #[test]
    fn classify_symmetry_and_dominance() {
        let (n, p) = net(2);
        let protos = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]).unwrap();
        let q = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let s = classify(&n, &p, &q, 1, &protos).unwrap();
        assert!(s.slice(0, 0)[0] > s.slice(0, 0)[1]);
        assert!(s.slice(1, 0)[1] > s.slice(1, 0)[0]);
        let eq = Tensor::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let s = classify(&n, &p, &Tensor::from_rows(&[[0.0, 1.0]]).unwrap(), 1, &eq).unwrap();
        assert!((s.slice(0, 0)[0] - 0.5).abs() < 1e-15);
        let (n, mut p) = net(2);
        p.set_value("temp.b2", Tensor::full(&[1, 1], inverse_softplus(0.01))).unwrap();
        let s = classify(&n, &p, &Tensor::from_rows(&[[2.0, 0.0]]).unwrap(), 1, &protos).unwrap();
        assert!(s.slice(0, 0)[0] > 1.0 - 1e-12);
    }

    #[test]
    fn argmax_follows_minimal_distance_and_common_temperature() {
        let mut rng = seeds::rng(31);
        for trial in 0..40 {
            let (n, mut p) = net(3);
            randomize(&mut p, 100 + trial);
            let protos = Tensor::matrix(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = classify(&n, &p, &Tensor::matrix(1, 3, q.clone()).unwrap(), 1, &protos).unwrap();
            let d: Vec<f64> = (0..4).map(|i| distance(&n, &p, &q, protos.row(i)).unwrap()).collect();
            let argmin = (0..4).fold(0, |b, i| if d[i] < d[b] { i } else { b });
            let argmax = (0..4).fold(0, |b, i| if s.slice(0, 0)[i] > s.slice(0, 0)[b] { i } else { b });
            assert_eq!(argmin, argmax);

            let (n2, mut c1) = net(3);
            c1.set_value("temp.b2", Tensor::full(&[1, 1], inverse_softplus(0.4))).unwrap();
            let mut c2 = c1.clone();
            c2.set_value("temp.b2", Tensor::full(&[1, 1], inverse_softplus(0.8 + DEFAULT_EPSILON))).unwrap();
            let am = |p: &ParamSet| {
                let s = classify(&n2, p, &Tensor::matrix(1, 3, q.clone()).unwrap(), 1, &protos).unwrap();
                (0..4).fold(0, |b, i| if s.slice(0, 0)[i] > s.slice(0, 0)[b] { i } else { b })
            };
            assert_eq!(am(&c1), am(&c2));
        }
    }

    #[test]
    fn temperature_gradients() {
        let (n, mut p) = net(4);
        let mut rng = seeds::rng(41);
        let x = Tensor::matrix(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let c = Tensor::matrix(2, 4, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let names: Vec<String> = p.names().map(String::from).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        for point in 0..5 {
            randomize(&mut p, 200 + point);
            let err = worst_param_error(&p, &names, |q| {
                let mut t = Tape::new();
                let xv = t.constant(x.clone());
                let cv = t.constant(c.clone());
                let s = n.scores(&mut t, q, xv, cv);
                let w = t.constant(Tensor::matrix(3, 2, vec![0.3, -1.0, 2.0, 0.5, -0.7, 1.1]).unwrap());
                let y = t.mul(s, w);
                let out = t.sum(y);
                (t, out)
            });
            assert!(err < 1e-4, "relative error {err}");
        }
    }
}
