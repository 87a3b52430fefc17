//! Feature extractor `f_θ`.
//!
//! Feature-mode data is used as is ([`Encoder::Identity`]). Raster data is
//! flattened, scaled to `[0, 1]` and passed through a small ReLU network.
//! Instances are encoded row by row with no cross-row coupling, so a batch
//! encodes exactly like its members one at a time.

use serde::{Deserialize, Serialize};

use crate::episodes::Payload;
use crate::numkit::{ParamGroup, ParamSet, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    #[default]
    Identity,
    SmallMlp,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Encoder {
    Identity { dim: usize },
    SmallMlp { input: usize, hidden: Vec<usize>, output: usize },
}

impl Encoder {
    pub fn input_dim(&self) -> usize {
        match self {
            Encoder::Identity { dim } => *dim,
            Encoder::SmallMlp { input, .. } => *input,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::Identity { dim } => *dim,
            Encoder::SmallMlp { output, .. } => *output,
        }
    }

    fn layer_sizes(&self) -> Vec<usize> {
        match self {
            Encoder::Identity { .. } => Vec::new(),
            Encoder::SmallMlp { input, hidden, output } => {
                let mut s = vec![*input];
                s.extend(hidden);
                s.push(*output);
                s
            }
        }
    }

    /// Registers the encoder weights (`enc.w{i}`, `enc.b{i}`).
    pub fn init(&self, params: &mut ParamSet, rng: &mut impl rand::Rng) {
        let sizes = self.layer_sizes();
        for (i, pair) in sizes.windows(2).enumerate() {
            let gain = if i + 2 < sizes.len() { 2.0 } else { 1.0 };
            params.insert_weight(&format!("enc.w{i}"), pair[0], pair[1], gain, ParamGroup::Encoder, rng);
            params.insert_bias(&format!("enc.b{i}"), pair[1], 0.0, ParamGroup::Encoder);
        }
    }

    /// Embeds the rows of `x` (`[r × input] -> [r × d]`).
    pub fn encode(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Var {
        let layers = self.layer_sizes().len().saturating_sub(1);
        let mut h = x;
        for i in 0..layers {
            let w = tape.param(params, &format!("enc.w{i}"));
            let b = tape.param(params, &format!("enc.b{i}"));
            let z = tape.matmul(h, w);
            h = tape.add_row(z, b);
            if i + 1 < layers {
                h = tape.relu(h);
            }
        }
        h
    }

    /// Tape-free encoding of a batch.
    pub fn encode_values(&self, params: &ParamSet, x: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let out = self.encode(&mut tape, params, v);
        tape.value(out).clone()
    }

    /// Hidden-unit signs at `x`; used to detect ReLU kinks between two
    /// nearby parameter points.
    pub fn activation_pattern(&self, params: &ParamSet, x: &Tensor) -> Vec<bool> {
        let layers = self.layer_sizes().len().saturating_sub(1);
        let mut tape = Tape::new();
        let mut h = tape.constant(x.clone());
        let mut pattern = Vec::new();
        for i in 0..layers {
            let w = tape.constant(params.value(&format!("enc.w{i}")).expect("encoder weight").clone());
            let b = tape.constant(params.value(&format!("enc.b{i}")).expect("encoder bias").clone());
            let z = tape.matmul(h, w);
            let z = tape.add_row(z, b);
            if i + 1 < layers {
                pattern.extend(tape.value(z).data().iter().map(|&v| v > 0.0));
                h = tape.relu(z);
            }
        }
        pattern
    }
}

/// Flattens payloads into an input matrix. Pixels are scaled to `[0, 1]`.
pub fn payload_matrix<'a>(encoder: &Encoder, payloads: impl IntoIterator<Item = &'a Payload>) -> Result<Tensor> {
    let want = encoder.input_dim();
    let mut data = Vec::new();
    let mut rows = 0;
    for p in payloads {
        let before = data.len();
        match (encoder, p) {
            (Encoder::Identity { .. }, Payload::Feature(v)) => data.extend_from_slice(v),
            (Encoder::SmallMlp { .. }, Payload::Image(img)) => {
                data.extend(img.pixels().iter().map(|&b| b as f64 / 255.0))
            }
            (Encoder::SmallMlp { .. }, Payload::Feature(v)) => data.extend_from_slice(v),
            (Encoder::Identity { .. }, Payload::Image(_)) => {
                return Err(Error::Usage("identity encoder needs feature-mode instances".into()))
            }
        }
        if data.len() - before != want {
            return Err(Error::Dimension(format!(
                "encoder expects inputs of length {want}, got {}",
                data.len() - before
            )));
        }
        rows += 1;
    }
    Tensor::new(vec![rows, want], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::RasterImage;
    use crate::seeds;
    use rand::Rng;

    fn mlp() -> Encoder {
        Encoder::SmallMlp { input: 6, hidden: vec![5, 4], output: 3 }
    }

    #[test]
    fn identity_passes_through() {
        let enc = Encoder::Identity { dim: 3 };
        let x = payload_matrix(&enc, &[Payload::Feature(vec![1.0, -2.0, 0.5])]).unwrap();
        assert_eq!(enc.encode_values(&ParamSet::new(), &x), x);
        let img = Payload::Image(RasterImage::filled(2, 2, 1, 0).unwrap());
        assert!(matches!(payload_matrix(&enc, [&img]), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_weights_give_zero() {
        let enc = mlp();
        let mut params = ParamSet::new();
        enc.init(&mut params, &mut seeds::rng(1));
        let names: Vec<String> = params.names().map(String::from).collect();
        for n in names {
            let shape = params.value(&n).unwrap().shape().to_vec();
            params.set_value(&n, Tensor::zeros(&shape)).unwrap();
        }
        let x = Tensor::matrix(2, 6, (0..12).map(|v| v as f64).collect()).unwrap();
        assert!(enc.encode_values(&params, &x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_equals_rowwise() {
        let enc = mlp();
        let mut params = ParamSet::new();
        enc.init(&mut params, &mut seeds::rng(2));
        let mut rng = seeds::rng(3);
        let x = Tensor::matrix(4, 6, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let batch = enc.encode_values(&params, &x);
        for r in 0..4 {
            let one = Tensor::matrix(1, 6, x.row(r).to_vec()).unwrap();
            assert_eq!(enc.encode_values(&params, &one).data(), batch.row(r));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let enc = mlp();
        let mut params = ParamSet::new();
        enc.init(&mut params, &mut seeds::rng(4));
        let mut rng = seeds::rng(5);
        let x = Tensor::matrix(3, 6, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let loss = |p: &ParamSet| {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let out = enc.encode(&mut t, p, xv);
            let sq = t.mul(out, out);
            let s = t.sum(sq);
            (t, s)
        };
        let (tape, out) = loss(&params);
        let grads = tape.backward(out).unwrap();
        params.zero_grad();
        params.absorb(&tape, &grads);
        let h = 1e-5;
        let names: Vec<String> = params.names().map(String::from).collect();
        let mut checked = 0;
        for n in &names {
            for i in 0..params.value(n).unwrap().len() {
                let shifted = |delta: f64| {
                    let mut p = params.clone();
                    let mut v = p.value(n).unwrap().clone();
                    v.data_mut()[i] += delta;
                    p.set_value(n, v).unwrap();
                    p
                };
                let (pp, pm) = (shifted(h), shifted(-h));
                if enc.activation_pattern(&pp, &x) != enc.activation_pattern(&pm, &x) {
                    continue;
                }
                let f = |p: &ParamSet| {
                    let (t, s) = loss(p);
                    t.value(s).item()
                };
                let numeric = (f(&pp) - f(&pm)) / (2.0 * h);
                let analytic = params.grad(n).unwrap().data()[i];
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                assert!(rel < 1e-4, "{n}[{i}]: {analytic} vs {numeric}");
                checked += 1;
            }
        }
        assert!(checked > 50);
    }
}
