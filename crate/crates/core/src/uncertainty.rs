//! Ensemble averaging and mutual information.
//!
//! For one query with member distributions `P_0 .. P_m`:
//! `I = H(mean_k P_k) - mean_k H(P_k)`, in nats. Jensen's inequality makes
//! `I` non-negative; floating-point residue below zero is clamped.

use std::io::Write;

use crate::metric::ScoreTensor;
use crate::numkit::{Tape, Tensor, Var};
use crate::{Error, Result};

/// `P̄`, one distribution per query.
#[derive(Clone, Debug, PartialEq)]
pub struct AvgScores {
    pub values: Tensor,
}

/// Mutual information per query.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyVector {
    pub values: Vec<f64>,
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain("entropy of a vector with negative or non-finite entries".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::Domain(format!("entropy of a vector summing to {total}")));
    }
    Ok(entropy_unchecked(p))
}

fn entropy_unchecked(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

pub fn average_scores(scores: &ScoreTensor) -> AvgScores {
    let (q, m, n) = (scores.queries(), scores.members(), scores.classes());
    let mut out = vec![0.0; q * n];
    for j in 0..q {
        let row = &mut out[j * n..(j + 1) * n];
        for k in 0..m {
            for (o, p) in row.iter_mut().zip(scores.slice(j, k)) {
                *o += p;
            }
        }
        row.iter_mut().for_each(|v| *v /= m as f64);
    }
    AvgScores { values: Tensor::from_parts(vec![q, n], out) }
}

pub fn mutual_information(scores: &ScoreTensor) -> UncertaintyVector {
    let avg = average_scores(scores);
    let m = scores.members();
    let values = (0..scores.queries())
        .map(|j| {
            let member = (0..m).map(|k| entropy_unchecked(scores.slice(j, k))).sum::<f64>() / m as f64;
            (entropy_unchecked(avg.values.row(j)) - member).max(0.0)
        })
        .collect();
    UncertaintyVector { values }
}

/// Taped form: `scores` is `[(r·members) × N]` query-major. Returns
/// `(P̄ [r × N], I [r × 1])`.
pub fn average_and_mi(tape: &mut Tape, scores: Var, members: usize) -> (Var, Var) {
    let avg = tape.group_mean_rows(scores, members);
    let h_avg = tape.entropy_rows(avg);
    let h_members = tape.entropy_rows(scores);
    let h_mean = tape.group_mean_rows(h_members, members);
    let diff = tape.sub(h_avg, h_mean);
    let mi = tape.clamp(diff, 0.0, f64::INFINITY);
    (avg, mi)
}

/// One row of the MI distribution export.
#[derive(Clone, Debug, PartialEq)]
pub struct MiRecord {
    pub variant: String,
    pub episode: usize,
    pub rank: usize,
    pub mi: f64,
    pub weight: f64,
}

pub const MI_CSV_HEADER: &str = "variant,episode,rank,mi,weight";

pub fn write_mi_csv(records: &[MiRecord], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{MI_CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{},{},{},{:e},{:e}", r.variant, r.episode, r.rank, r.mi, r.weight)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use rand::Rng;

    fn two_members(a: &[f64], b: &[f64]) -> ScoreTensor {
        ScoreTensor::from_nested(&[vec![a.to_vec(), b.to_vec()]]).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[0.2; 5]).unwrap() - 5f64.ln()).abs() < 1e-12);
        let p = [0.7311, 0.2689];
        let oracle = -(0.7311f64 * 0.7311f64.ln() + 0.2689f64 * 0.2689f64.ln());
        assert!((entropy(&p).unwrap() - oracle).abs() < 1e-15);
        assert!(matches!(entropy(&[0.5, 0.6]), Err(Error::Domain(_))));
        assert!(entropy(&[1.5, -0.5]).is_err());
    }

    #[test]
    fn averages_and_mi_examples() {
        let s = two_members(&[1.0, 0.0], &[0.0, 1.0]);
        assert_eq!(average_scores(&s).values.data(), &[0.5, 0.5]);
        assert!((mutual_information(&s).values[0] - 2f64.ln()).abs() < 1e-15);
        let s = two_members(&[0.3, 0.7], &[0.3, 0.7]);
        assert_eq!(average_scores(&s).values.data(), &[0.3, 0.7]);
        assert!(mutual_information(&s).values[0] < 1e-15);
    }

    #[test]
    fn taped_form_agrees() {
        let mut rng = seeds::rng(8);
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|_| {
                let v: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = v.iter().sum();
                v.iter().map(|x| x / s).collect()
            })
            .collect();
        let t = Tensor::from_rows(&rows).unwrap();
        let st = ScoreTensor::new(4, 3, t.clone()).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(t);
        let (avg, mi) = average_and_mi(&mut tape, v, 3);
        assert!(tape.value(avg).max_abs_diff(&average_scores(&st).values) < 1e-15);
        let direct = mutual_information(&st).values;
        for (a, b) in tape.value(mi).data().iter().zip(&direct) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn csv_header_only() {
        let mut buf = Vec::new();
        write_mi_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "variant,episode,rank,mi,weight\n");
    }

    proptest::proptest! {
        #[test]
        fn mi_bounds_and_invariances(
            q in 1usize..5, m in 2usize..6, n in 2usize..6, seed in 0u64..1000
        ) {
            let mut rng = seeds::rng(seed);
            let nested: Vec<Vec<Vec<f64>>> = (0..q).map(|_| (0..m).map(|_| {
                let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0f64).powi(3)).collect();
                let s: f64 = v.iter().sum::<f64>().max(1e-300);
                v.iter().map(|x| x / s).collect()
            }).collect()).collect();
            let st = ScoreTensor::from_nested(&nested).unwrap();
            let mi = mutual_information(&st).values;
            let avg = average_scores(&st);
            for j in 0..q {
                let h = entropy_unchecked(avg.values.row(j));
                proptest::prop_assert!(mi[j] >= 0.0);
                proptest::prop_assert!(mi[j] <= h + 1e-10);
                proptest::prop_assert!(mi[j] <= (m as f64).ln() + 1e-10);
            }
            let reversed: Vec<Vec<Vec<f64>>> = nested.iter().map(|ms| ms.iter().rev().cloned().collect()).collect();
            let mi_r = mutual_information(&ScoreTensor::from_nested(&reversed).unwrap()).values;
            let rotated: Vec<Vec<Vec<f64>>> = nested.iter().map(|ms| ms.iter().map(|p| {
                let mut p = p.clone();
                p.rotate_left(1);
                p
            }).collect()).collect();
            let mi_c = mutual_information(&ScoreTensor::from_nested(&rotated).unwrap()).values;
            for j in 0..q {
                proptest::prop_assert!((mi[j] - mi_r[j]).abs() < 1e-12);
                proptest::prop_assert!((mi[j] - mi_c[j]).abs() < 1e-12);
            }
        }
    }
}
