//! Weight generator `h_ψ`: maps the per-instance uncertainty sequence to a
//! per-instance gate in `(0, 1)`.
//!
//! Each scalar MI value is embedded by a learned linear map into `dim`
//! dimensions. `MultiAtt` runs one multi-head self-attention block with a
//! residual connection over the whole sequence; `Mlp` treats tokens
//! independently. Both end with a SiLU, a linear map to one unit and a
//! sigmoid.

use serde::{Deserialize, Serialize};

use crate::numkit::{ParamGroup, ParamSet, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    #[default]
    MultiAtt,
    Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightGenerator {
    pub kind: GeneratorKind,
    /// Token width; also the total key and value width of the attention.
    pub dim: usize,
    pub heads: usize,
}

impl WeightGenerator {
    pub fn new(kind: GeneratorKind, dim: usize, heads: usize) -> Result<Self> {
        if dim == 0 || heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "weight generator width {dim} must be a positive multiple of the head count {heads}"
            )));
        }
        Ok(Self { kind, dim, heads })
    }

    /// Registers `gen.*`. The output layer starts at zero with a bias giving
    /// `initial` for every token.
    pub fn init(&self, params: &mut ParamSet, initial: f64, rng: &mut impl rand::Rng) -> Result<()> {
        if !(initial > 0.0 && initial < 1.0) {
            return Err(Error::Config(format!("initial gate must lie in (0, 1), got {initial}")));
        }
        let d = self.dim;
        let g = ParamGroup::Head;
        params.insert_weight("gen.embed_w", 1, d, 1.0, g, rng);
        params.insert_bias("gen.embed_b", d, 0.0, g);
        match self.kind {
            GeneratorKind::MultiAtt => {
                for name in ["gen.wq", "gen.wk", "gen.wv", "gen.wo"] {
                    params.insert_weight(name, d, d, 1.0, g, rng);
                }
            }
            GeneratorKind::Mlp => {
                params.insert_weight("gen.w1", d, d, 2.0, g, rng);
                params.insert_bias("gen.b1", d, 0.0, g);
            }
        }
        params.insert("gen.out_w", Tensor::zeros(&[d, 1]), g);
        params.insert_bias("gen.out_b", 1, (initial / (1.0 - initial)).ln(), g);
        Ok(())
    }

    /// `[r × 1]` uncertainties to `[r × 1]` gates.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, mi: Var) -> Var {
        let ew = tape.param(params, "gen.embed_w");
        let eb = tape.param(params, "gen.embed_b");
        let e = tape.matmul(mi, ew);
        let tokens = tape.add_row(e, eb);
        let hidden = match self.kind {
            GeneratorKind::MultiAtt => {
                let attended = self.attention(tape, params, tokens);
                tape.add(tokens, attended)
            }
            GeneratorKind::Mlp => {
                let a = tape.silu(tokens);
                let w = tape.param(params, "gen.w1");
                let b = tape.param(params, "gen.b1");
                let z = tape.matmul(a, w);
                tape.add_row(z, b)
            }
        };
        let act = tape.silu(hidden);
        let ow = tape.param(params, "gen.out_w");
        let ob = tape.param(params, "gen.out_b");
        let z = tape.matmul(act, ow);
        let z = tape.add_row(z, ob);
        tape.sigmoid(z)
    }

    fn attention(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Var {
        let head_dim = self.dim / self.heads;
        let proj = |tape: &mut Tape, name: &str| {
            let w = tape.param(params, name);
            tape.matmul(x, w)
        };
        let (q, k, v) = (proj(tape, "gen.wq"), proj(tape, "gen.wk"), proj(tape, "gen.wv"));
        let heads: Vec<Var> = (0..self.heads)
            .map(|h| {
                let qh = tape.slice_cols(q, h * head_dim, head_dim);
                let kh = tape.slice_cols(k, h * head_dim, head_dim);
                let vh = tape.slice_cols(v, h * head_dim, head_dim);
                let kt = tape.transpose(kh);
                let logits = tape.matmul(qh, kt);
                let logits = tape.scale(logits, 1.0 / (head_dim as f64).sqrt());
                let attn = tape.softmax_rows(logits);
                tape.matmul(attn, vh)
            })
            .collect();
        let joined = tape.concat_cols(&heads);
        let wo = tape.param(params, "gen.wo");
        tape.matmul(joined, wo)
    }

    /// Tape-free gates for an uncertainty sequence.
    pub fn gates(&self, params: &ParamSet, mi: &[f64]) -> Vec<f64> {
        if mi.is_empty() {
            return Vec::new();
        }
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::from_parts(vec![mi.len(), 1], mi.to_vec()));
        let out = self.forward(&mut tape, params, v);
        tape.value(out).data().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use crate::testutil::worst_param_error;
    use rand::Rng;

    fn generator(kind: GeneratorKind) -> (WeightGenerator, ParamSet) {
        let g = WeightGenerator::new(kind, 8, 2).unwrap();
        let mut p = ParamSet::new();
        g.init(&mut p, 0.7, &mut seeds::rng(3)).unwrap();
        (g, p)
    }

    fn randomize(p: &mut ParamSet, seed: u64) {
        let mut rng = seeds::rng(seed);
        let names: Vec<String> = p.names().map(String::from).collect();
        for n in names {
            let cur = p.value(&n).unwrap();
            let v = Tensor::new(cur.shape().to_vec(), (0..cur.len()).map(|_| rng.random_range(-0.7..0.7)).collect()).unwrap();
            p.set_value(&n, v).unwrap();
        }
    }

    #[test]
    fn initial_gate_is_constant() {
        for kind in [GeneratorKind::MultiAtt, GeneratorKind::Mlp] {
            let (g, p) = generator(kind);
            for v in g.gates(&p, &[0.0, 0.3, 1.2]) {
                assert!((v - 0.7).abs() < 1e-12);
            }
        }
        assert!(WeightGenerator::new(GeneratorKind::MultiAtt, 10, 4).is_err());
    }

    #[test]
    fn outputs_in_unit_interval_for_any_length() {
        for kind in [GeneratorKind::MultiAtt, GeneratorKind::Mlp] {
            let (g, mut p) = generator(kind);
            randomize(&mut p, 5);
            for len in [1, 2, 7, 40] {
                let mi: Vec<f64> = (0..len).map(|i| (i as f64 * 0.37) % 1.6).collect();
                let out = g.gates(&p, &mi);
                assert_eq!(out.len(), len);
                assert!(out.iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
    }

    #[test]
    fn mlp_is_tokenwise_and_attention_is_permutation_equivariant() {
        let (g, mut p) = generator(GeneratorKind::Mlp);
        randomize(&mut p, 6);
        let alone = g.gates(&p, &[0.4])[0];
        assert!((g.gates(&p, &[0.1, 0.4, 0.9])[1] - alone).abs() < 1e-14);

        let (g, mut p) = generator(GeneratorKind::MultiAtt);
        randomize(&mut p, 7);
        let a = g.gates(&p, &[0.1, 0.4, 0.9]);
        let b = g.gates(&p, &[0.9, 0.1, 0.4]);
        assert!((a[0] - b[1]).abs() < 1e-14 && (a[1] - b[2]).abs() < 1e-14 && (a[2] - b[0]).abs() < 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mi = Tensor::matrix(4, 1, vec![0.05, 0.6, 0.3, 1.1]).unwrap();
        for kind in [GeneratorKind::MultiAtt, GeneratorKind::Mlp] {
            let (g, mut p) = generator(kind);
            let names: Vec<String> = p.names().map(String::from).collect();
            let names: Vec<&str> = names.iter().map(String::as_str).collect();
            for point in 0..3 {
                randomize(&mut p, 50 + point);
                let err = worst_param_error(&p, &names, |q| {
                    let mut t = Tape::new();
                    let x = t.constant(mi.clone());
                    let y = g.forward(&mut t, q, x);
                    let w = t.constant(Tensor::matrix(4, 1, vec![1.0, -2.0, 0.5, 3.0]).unwrap());
                    let z = t.mul(y, w);
                    let s = t.sum(z);
                    (t, s)
                });
                assert!(err < 1e-4, "{kind:?}: {err}");
            }
        }
    }
}
