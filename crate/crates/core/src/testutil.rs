use crate::numkit::{ParamSet, Tape, Var};

/// Central-difference check of every coordinate of the named parameters.
/// Returns the worst relative error.
pub(crate) fn worst_param_error(
    params: &ParamSet,
    names: &[&str],
    f: impl Fn(&ParamSet) -> (Tape, Var),
) -> f64 {
    let (tape, out) = f(params);
    let grads = tape.backward(out).unwrap();
    let mut p = params.clone();
    p.zero_grad();
    p.absorb(&tape, &grads);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for &n in names {
        let base = params.value(n).unwrap_or_else(|| panic!("no parameter {n}")).clone();
        for i in 0..base.len() {
            let eval = |delta: f64| {
                let mut q = params.clone();
                let mut v = base.clone();
                v.data_mut()[i] += delta;
                q.set_value(n, v).unwrap();
                let (t, o) = f(&q);
                t.value(o).item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let analytic = p.grad(n).unwrap().data()[i];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}
