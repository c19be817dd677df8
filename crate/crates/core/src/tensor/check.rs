use super::{NdArray, Tape, Tensor};
use crate::error::{Error, Result};

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Clone, Debug)]
pub struct FdReport {
    pub max_rel_err: f64,
    /// Flat index of the worst component.
    pub worst: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Relative error with the denominator floored at `1e-8`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Checks `grad(f(x), x)` against central differences with the given step.
pub fn finite_diff_check<F>(f: F, x: &NdArray, step: f64) -> Result<FdReport>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if step <= 0.0 {
        return Err(Error::Invalid(format!("step must be positive, got {step}")));
    }
    let tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let y = f(&leaf)?;
    if y.len() != 1 {
        return Err(Error::NotScalarOutput(y.shape().to_vec()));
    }
    let analytic = if y.requires_grad() {
        tape.grad(&y, &[leaf], false)?.remove(0).to_array().into_data()
    } else {
        vec![0.0; x.len()]
    };

    let eval = |i: usize, delta: f64| -> Result<f64> {
        let mut xp = x.clone();
        xp.data_mut()[i] += delta;
        let v = f(&Tensor::constant(xp))?.item();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "f is {v} at component {i} perturbed by {delta:+e}"
            )));
        }
        Ok(v)
    };
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        numeric.push((eval(i, step)? - eval(i, -step)?) / (2.0 * step));
    }

    let (worst, max_rel_err) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .enumerate()
        .fold((0, 0.0), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
    Ok(FdReport {
        max_rel_err,
        worst,
        analytic,
        numeric,
    })
}
