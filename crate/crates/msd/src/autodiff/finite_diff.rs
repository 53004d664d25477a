//! Central finite differences over a parameter set.
//!
//! The independent oracle the gradient tests are written against: it only
//! ever calls the objective as a black box, never the tape.

use crate::autodiff::params::ParamSet;
use crate::error::{Error, Result};

/// Central-difference gradient estimate of a deterministic scalar objective:
/// `(f(p + step·e) − f(p − step·e)) / (2·step)` per coordinate.
pub fn finite_diff_gradient<F>(mut f: F, p: &ParamSet, step: f64) -> Result<ParamSet>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::Contract(format!("finite-diff step must be > 0, got {step}")));
    }
    let base = p.snapshot();
    let flat = base.flatten();
    let mut grad = vec![0.0; flat.len()];
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += step;
        let mut minus = flat.clone();
        minus[i] -= step;
        let fp = f(&base.unflatten_like(&plus)?)?;
        let fm = f(&base.unflatten_like(&minus)?)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(format!(
                "objective returned a non-finite value near coordinate {i}"
            )));
        }
        grad[i] = (fp - fm) / (2.0 * step);
    }
    base.unflatten_like(&grad)
}

/// Largest relative error between two gradients, with an absolute floor to
/// keep near-zero coordinates from blowing up the ratio.
pub fn max_relative_error(a: &ParamSet, b: &ParamSet) -> Result<f64> {
    let (fa, fb) = (a.flatten(), b.flatten());
    if fa.len() != fb.len() {
        return Err(Error::Contract("gradient dimension mismatch".into()));
    }
    let mut worst = 0.0_f64;
    for (x, y) in fa.iter().zip(fb.iter()) {
        let denom = x.abs().max(y.abs()).max(1e-6);
        worst = worst.max((x - y).abs() / denom);
    }
    Ok(worst)
}
