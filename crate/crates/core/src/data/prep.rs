//! Standardization and chronological splitting.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::series::TimeSeries;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Per-feature z-scoring fit on the clean training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits population mean and standard deviation per feature.
    pub fn fit(train: &TimeSeries) -> Result<Self> {
        let n = train.len();
        if n == 0 {
            return Err(Error::Data("cannot fit a standardizer on an empty series".into()));
        }
        let v = train.values();
        let nf = n as f64;
        let mean: Vec<f64> = v.column_sums().iter().map(|s| s / nf).collect();
        let mut var = vec![0.0; v.cols()];
        for r in 0..n {
            for (c, x) in v.row(r).iter().enumerate() {
                let d = x - mean[c];
                var[c] += d * d;
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / nf).sqrt()).collect();
        if let Some(c) = std.iter().position(|&s| !(s > 0.0)) {
            return Err(Error::Data(format!(
                "feature `{}` has zero variance on the training split",
                train.feature_names()[c]
            )));
        }
        Ok(Standardizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, m: &Matrix) -> Result<()> {
        if m.cols() > self.dim() {
            return Err(Error::shape(
                "Standardizer",
                format!("{} features", self.dim()),
                m.shape_str(),
            ));
        }
        Ok(())
    }

    /// Z-scores the leading `m.cols()` features of `m`.
    pub fn apply_matrix(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m)?;
        let mut out = m.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        Ok(out)
    }

    pub fn invert_matrix(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m)?;
        let mut out = m.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.std[c] + self.mean[c];
            }
        }
        Ok(out)
    }

    pub fn apply(&self, series: &TimeSeries) -> Result<TimeSeries> {
        if series.dim() != self.dim() {
            return Err(Error::shape(
                "Standardizer::apply",
                format!("{} features", self.dim()),
                format!("{} features", series.dim()),
            ));
        }
        Ok(series.with_values(self.apply_matrix(series.values())?))
    }

    pub fn invert(&self, series: &TimeSeries) -> Result<TimeSeries> {
        if series.dim() != self.dim() {
            return Err(Error::shape(
                "Standardizer::invert",
                format!("{} features", self.dim()),
                format!("{} features", series.dim()),
            ));
        }
        Ok(series.with_values(self.invert_matrix(series.values())?))
    }
}

/// Train/validation/test fractions.
pub const DEFAULT_SPLIT: [f64; 3] = [0.70, 0.15, 0.15];

/// Index ranges of a chronological split with boundaries at `floor(T·cumfrac)`.
/// Every segment must hold at least `min_len` rows.
pub fn split_ranges(len: usize, fractions: [f64; 3], min_len: usize) -> Result<[Range<usize>; 3]> {
    if fractions.iter().any(|f| !(*f > 0.0)) {
        return Err(Error::invalid("fractions", "every split fraction must be positive"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("fractions", format!("must sum to 1, got {total}")));
    }
    // the small offset keeps products like 100 × 0.85 from flooring to 84
    let boundary = |cum: f64| ((len as f64 * cum) + 1e-9).floor() as usize;
    let b1 = boundary(fractions[0]).min(len);
    let b2 = boundary(fractions[0] + fractions[1]).min(len).max(b1);
    let ranges = [0..b1, b1..b2, b2..len];
    for (name, r) in ["train", "validation", "test"].iter().zip(&ranges) {
        if r.len() < min_len.max(1) {
            return Err(Error::Data(format!(
                "series of length {len} is too short: {name} split has {} rows, needs {}",
                r.len(),
                min_len.max(1)
            )));
        }
    }
    Ok(ranges)
}

/// Contiguous, ordered, disjoint train/validation/test segments.
pub fn chronological_split(
    series: &TimeSeries,
    fractions: [f64; 3],
    min_len: usize,
) -> Result<[TimeSeries; 3]> {
    let [a, b, c] = split_ranges(series.len(), fractions, min_len)?;
    Ok([
        series.slice(a.start, a.end),
        series.slice(b.start, b.end),
        series.slice(c.start, c.end),
    ])
}
