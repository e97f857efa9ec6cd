use super::{DiffTensor, Tape};
use crate::error::{Error, Result};

/// Compares the tape gradient of a scalar function against central differences.
///
/// Returns the largest `|analytic - numeric| / max(1, |analytic|)` over all
/// coordinates of `x`.
pub fn finite_diff_check<F>(f: F, shape: &[usize], x: &[f64], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, DiffTensor<'t>) -> Result<DiffTensor<'t>>,
{
    if !(eps > 0.0) {
        return Err(Error::config(format!("eps must be positive, got {eps}")));
    }
    let eval = |point: Vec<f64>| -> Result<f64> {
        let tape = Tape::new();
        let leaf = tape.leaf(shape, point)?;
        let v = f(&tape, leaf)?.item();
        if !v.is_finite() {
            return Err(Error::NumericDomain {
                op: "finite_diff_check",
                detail: format!("function value {v}"),
            });
        }
        Ok(v)
    };

    let tape = Tape::new();
    let leaf = tape.leaf(shape, x.to_vec())?;
    let out = f(&tape, leaf)?;
    if !out.item().is_finite() {
        return Err(Error::NumericDomain {
            op: "finite_diff_check",
            detail: format!("function value {}", out.item()),
        });
    }
    out.backward()?;
    let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; x.len()]);

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.to_vec();
        plus[i] += eps;
        let mut minus = x.to_vec();
        minus[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
