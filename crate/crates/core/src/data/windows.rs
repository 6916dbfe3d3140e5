//! Corrupted-input / clean-target window extraction.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::series::TimeSeries;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Dense sliding windows (stride 1).
    Train,
    /// Stride `L + k`: no two samples share an input or target timestep.
    Eval,
}

/// Window geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub input_len: usize,
    pub horizon: usize,
    /// Number of leading features used as targets.
    pub output_dim: usize,
}

impl WindowSpec {
    pub fn span(&self) -> usize {
        self.input_len + self.horizon
    }

    pub fn stride(&self, mode: WindowMode) -> usize {
        match mode {
            WindowMode::Train => 1,
            WindowMode::Eval => self.span(),
        }
    }

    /// Origins `t` (index of the last input row) of every window in a series
    /// of `len` rows.
    pub fn origins(&self, len: usize, mode: WindowMode) -> Vec<usize> {
        if self.input_len == 0 || self.horizon == 0 || len < self.span() {
            return Vec::new();
        }
        let last = len - self.horizon - 1;
        (self.input_len - 1..=last).step_by(self.stride(mode)).collect()
    }

    /// Number of windows without materializing them.
    pub fn count(&self, len: usize, mode: WindowMode) -> usize {
        if self.input_len == 0 || self.horizon == 0 || len < self.span() {
            return 0;
        }
        (len - self.span()) / self.stride(mode) + 1
    }
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// `L x D_in` rows `t-L+1 ..= t` of the corrupted series.
    pub input: Matrix,
    /// `k x D_out` rows `t+1 ..= t+k` of the clean series.
    pub target: Matrix,
    pub origin_index: usize,
}

impl WindowSample {
    pub fn input_range(&self) -> Range<usize> {
        self.origin_index + 1 - self.input.rows()..self.origin_index + 1
    }

    pub fn target_range(&self) -> Range<usize> {
        self.origin_index + 1..self.origin_index + 1 + self.target.rows()
    }
}

/// Builds windows whose inputs come from `observed` and targets from `clean`.
/// Both series must be aligned row for row (same segment of the same source).
pub fn make_windows(
    observed: &TimeSeries,
    clean: &TimeSeries,
    spec: WindowSpec,
    mode: WindowMode,
) -> Result<Vec<WindowSample>> {
    if observed.len() != clean.len() || observed.timestamps() != clean.timestamps() {
        return Err(Error::Data(
            "corrupted and clean series are not aligned".into(),
        ));
    }
    if spec.output_dim == 0 || spec.output_dim > clean.dim() {
        return Err(Error::Data(format!(
            "output_dim {} not in 1..={}",
            spec.output_dim,
            clean.dim()
        )));
    }
    if spec.input_len == 0 || spec.horizon == 0 {
        return Err(Error::invalid("spec", "window length and horizon must be positive"));
    }
    if observed.len() < spec.span() {
        return Err(Error::Data(format!(
            "series of length {} is shorter than one window (L + k = {})",
            observed.len(),
            spec.span()
        )));
    }
    let obs = observed.values();
    let cln = clean.values();
    Ok(spec
        .origins(observed.len(), mode)
        .into_iter()
        .map(|t| WindowSample {
            input: obs.slice_rows(t + 1 - spec.input_len, t + 1),
            target: cln.slice_rows(t + 1, t + 1 + spec.horizon).leading_cols(spec.output_dim),
            origin_index: t,
        })
        .collect())
}
