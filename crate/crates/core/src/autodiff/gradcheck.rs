//! Central finite-difference gradient checks.

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Relative error with a floor of `1e-6` on the denominator, so entries
/// whose true gradient is essentially zero are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Worst relative error between `grad` and central differences of `f` at `x`.
pub fn max_relative_error(x: &[f64], grad: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(relative_error(grad[i], (up - down) / (2.0 * h)));
    }
    worst
}

/// Records `build` on a fresh graph with `x` as a gradient-tracking leaf of
/// `shape`, back-propagates the scalar it returns and compares the leaf
/// gradient with central differences.
pub fn check_graph(shape: &[usize], x: &[f64], h: f64, build: impl Fn(&mut Graph, Var) -> Var) -> Result<f64> {
    let eval = |values: &[f64], with_grad: bool| -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let mut t = Tensor::new(shape.to_vec(), values.to_vec())?;
        t.requires_grad = with_grad;
        let v = g.leaf(&t);
        let out = build(&mut g, v);
        let loss = g.scalar(out);
        if with_grad {
            g.backward(out)?;
        }
        Ok((loss, g.grad(v)))
    };
    let (_, grad) = eval(x, true)?;
    let mut err = None;
    let worst = max_relative_error(x, &grad, h, |p| match eval(p, false) {
        Ok((l, _)) => l,
        Err(e) => {
            err.get_or_insert(e);
            f64::NAN
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(worst),
    }
}
