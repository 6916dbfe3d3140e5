//! Loss and evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Mean squared error over every element and its gradient `2(p − t)/n`.
///
/// For a `B x (k·D_out)` batch this is the average of the per-sample losses,
/// since every sample has the same element count.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("mse_loss", pred.shape_str(), target.shape_str()));
    }
    if pred.is_empty() {
        return Err(Error::invalid("pred", "empty prediction"));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.as_slice().iter().zip(target.as_slice()) {
        let d = p - t;
        loss += d * d;
        grad.push(2.0 * d / n);
    }
    let grad = Matrix::from_vec(pred.rows(), pred.cols(), grad)?;
    Ok((loss / n, grad))
}

/// Error summary. `r2` is `None` when the targets have zero spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub r2: Option<f64>,
}

fn summarize<'a>(pairs: impl Iterator<Item = (&'a f64, &'a f64)> + Clone) -> Metrics {
    let mut n = 0usize;
    let mut sum_t = 0.0;
    for (_, &t) in pairs.clone() {
        n += 1;
        sum_t += t;
    }
    let mean_t = sum_t / n as f64;
    let (mut sse, mut sae, mut sst) = (0.0, 0.0, 0.0);
    for (&p, &t) in pairs {
        let d = p - t;
        sse += d * d;
        sae += d.abs();
        sst += (t - mean_t) * (t - mean_t);
    }
    let r2 = if n >= 2 && sst > 0.0 { Some(1.0 - sse / sst) } else { None };
    Metrics {
        mse: sse / n as f64,
        mae: sae / n as f64,
        r2,
    }
}

fn check_pair(preds: &Matrix, targets: &Matrix) -> Result<()> {
    if preds.shape() != targets.shape() {
        return Err(Error::shape("metrics", preds.shape_str(), targets.shape_str()));
    }
    if preds.is_empty() {
        return Err(Error::invalid("preds", "no predictions to score"));
    }
    Ok(())
}

/// MSE, MAE and R² pooled over every element. R² measures residuals against
/// the single mean of all target elements.
pub fn metrics(preds: &Matrix, targets: &Matrix) -> Result<Metrics> {
    check_pair(preds, targets)?;
    Ok(summarize(preds.as_slice().iter().zip(targets.as_slice())))
}

/// Metrics for each output feature. Matrices hold one `k x D_out` sample per
/// row, flattened row-major, so feature `f` sits in columns `f, f + D_out, ...`.
pub fn per_feature_metrics(preds: &Matrix, targets: &Matrix, output_dim: usize) -> Result<Vec<Metrics>> {
    check_pair(preds, targets)?;
    if output_dim == 0 || preds.cols() % output_dim != 0 {
        return Err(Error::invalid(
            "output_dim",
            format!("{} columns do not split into {output_dim} features", preds.cols()),
        ));
    }
    Ok((0..output_dim)
        .map(|f| {
            let p = preds.as_slice().iter().skip(f).step_by(output_dim);
            let t = targets.as_slice().iter().skip(f).step_by(output_dim);
            summarize(p.zip(t))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Matrix {
        Matrix::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn unit_error_gives_unit_loss() {
        let p = Matrix::filled(2, 5, 1.0);
        let t = Matrix::zeros(2, 5);
        let (loss, grad) = mse_loss(&p, &t).unwrap();
        assert_eq!(loss, 1.0);
        assert!(grad.as_slice().iter().all(|&g| g == 0.2));
    }

    #[test]
    fn identical_inputs_give_zero_loss() {
        let p = m(1, 3, &[0.3, -1.0, 2.0]);
        let (loss, grad) = mse_loss(&p, &p).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn shape_mismatch() {
        assert!(mse_loss(&Matrix::zeros(2, 2), &Matrix::zeros(1, 4)).is_err());
        assert!(metrics(&Matrix::zeros(2, 2), &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn constant_targets_have_no_r2() {
        let t = Matrix::filled(3, 2, 4.0);
        let got = metrics(&Matrix::zeros(3, 2), &t).unwrap();
        assert_eq!(got.r2, None);
        assert_eq!(got.mse, 16.0);
        assert_eq!(got.mae, 4.0);
    }

    #[test]
    fn per_feature_columns() {
        // two samples, k = 2, D_out = 2
        let t = m(2, 4, &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]);
        let mut p = t.clone();
        p.set(0, 1, 11.0);
        let pf = per_feature_metrics(&p, &t, 2).unwrap();
        assert_eq!(pf[0].mse, 0.0);
        assert_eq!(pf[0].r2, Some(1.0));
        assert_eq!(pf[1].mse, 0.25);
        assert!(per_feature_metrics(&p, &t, 3).is_err());
    }
}
