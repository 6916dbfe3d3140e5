//! Central finite-difference gradient checking.

use crate::error::{Error, Result};

/// Relative error floor used in the denominator of the comparison.
const REL_FLOOR: f64 = 1e-8;

/// Central-difference gradient of `f` at `params`, one coordinate at a time.
pub fn numeric_gradient<F>(mut f: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::invalid("h", format!("step must be positive, got {h}")));
    }
    let mut theta = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let plus = f(&theta);
        theta[i] = orig - h;
        let minus = f(&theta);
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at coordinate {i}: f(+h)={plus}, f(-h)={minus}"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// `|a − n| / max(|a|, |n|, 1e-8)` for one coordinate.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Maximum relative error between `analytic` and the central-difference
/// gradient of `f`. `f` must be deterministic (disable dropout).
pub fn gradient_check<F>(f: F, params: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(Error::shape(
            "gradient_check",
            format!("{} params", params.len()),
            format!("{} analytic grads", analytic.len()),
        ));
    }
    let numeric = numeric_gradient(f, params, h)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}
