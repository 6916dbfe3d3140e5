//! Differentiable layer kernels with hand-written backward passes.
//!
//! Each `*_forward` returns its output together with a cache that the matching
//! `*_backward` consumes. Caches snapshot everything backward needs (including
//! weights), so mutating parameters between forward and backward does not
//! corrupt the cache, but the resulting gradients then describe the old
//! parameters, not the new ones.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::matrix::Matrix;
use super::rng::SeededRng;
use crate::error::{Error, Result};

/// Default LayerNorm epsilon.
pub const LAYERNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LinearCache {
    input: Matrix,
    weight: Matrix,
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub input: Matrix,
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// `y = x·w + b`, with `b` broadcast over rows.
pub fn linear_forward(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<(Matrix, LinearCache)> {
    if b.len() != w.cols() {
        return Err(Error::shape(
            "linear_forward bias",
            w.shape_str(),
            format!("bias of {}", b.len()),
        ));
    }
    let mut y = x.matmul(w)?;
    y.add_row_vector(b)?;
    Ok((
        y,
        LinearCache {
            input: x.clone(),
            weight: w.clone(),
        },
    ))
}

pub fn linear_backward(grad_y: &Matrix, cache: &LinearCache) -> Result<LinearGrads> {
    let expected = (cache.input.rows(), cache.weight.cols());
    if grad_y.shape() != expected {
        return Err(Error::shape(
            "linear_backward",
            grad_y.shape_str(),
            format!("{}x{}", expected.0, expected.1),
        ));
    }
    Ok(LinearGrads {
        input: grad_y.matmul_transposed(&cache.weight)?,
        weight: cache.input.transpose_matmul(grad_y)?,
        bias: grad_y.column_sums(),
    })
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
    gamma: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerNormGrads {
    pub input: Matrix,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Per-row normalization over the feature axis using the population variance.
pub fn layernorm_forward(
    x: &Matrix,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(Matrix, LayerNormCache)> {
    let d = x.cols();
    if d == 0 {
        return Err(Error::invalid("x", "layernorm needs at least one column"));
    }
    if gamma.len() != d || beta.len() != d {
        return Err(Error::shape(
            "layernorm_forward",
            x.shape_str(),
            format!("gamma {} / beta {}", gamma.len(), beta.len()),
        ));
    }
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::invalid("eps", format!("must be non-negative, got {eps}")));
    }
    let n = d as f64;
    let mut normalized = Matrix::zeros(x.rows(), d);
    let mut out = Matrix::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let denom = var + eps;
        // A zero-variance row with eps = 0 normalizes to zeros.
        let istd = if denom > 0.0 { 1.0 / denom.sqrt() } else { 0.0 };
        inv_std.push(istd);
        let xh = normalized.row_mut(r);
        for (h, v) in xh.iter_mut().zip(row) {
            *h = (v - mean) * istd;
        }
        let xh = normalized.row(r).to_vec();
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = xh[c] * gamma[c] + beta[c];
        }
    }
    Ok((
        out,
        LayerNormCache {
            normalized,
            inv_std,
            gamma: gamma.to_vec(),
        },
    ))
}

pub fn layernorm_backward(grad_y: &Matrix, cache: &LayerNormCache) -> Result<LayerNormGrads> {
    if grad_y.shape() != cache.normalized.shape() {
        return Err(Error::shape(
            "layernorm_backward",
            grad_y.shape_str(),
            cache.normalized.shape_str(),
        ));
    }
    let d = grad_y.cols();
    let n = d as f64;
    let mut grad_x = Matrix::zeros(grad_y.rows(), d);
    let mut grad_gamma = vec![0.0; d];
    let mut grad_beta = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    for r in 0..grad_y.rows() {
        let gy = grad_y.row(r);
        let xh = cache.normalized.row(r);
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for c in 0..d {
            grad_gamma[c] += gy[c] * xh[c];
            grad_beta[c] += gy[c];
            dxhat[c] = gy[c] * cache.gamma[c];
            sum_dxhat += dxhat[c];
            sum_dxhat_xhat += dxhat[c] * xh[c];
        }
        let scale = cache.inv_std[r] / n;
        for (c, g) in grad_x.row_mut(r).iter_mut().enumerate() {
            *g = scale * (n * dxhat[c] - sum_dxhat - xh[c] * sum_dxhat_xhat);
        }
    }
    Ok(LayerNormGrads {
        input: grad_x,
        gamma: grad_gamma,
        beta: grad_beta,
    })
}

/// Standard normal CDF via the error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub fn gelu_derivative(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

/// Saves the input and `Φ(input)` so backward needs no second `erf`.
#[derive(Debug, Clone)]
pub struct GeluCache {
    input: Matrix,
    cdf: Vec<f64>,
}

pub fn gelu_forward(x: &Matrix) -> (Matrix, GeluCache) {
    let cdf: Vec<f64> = x.as_slice().iter().map(|&v| normal_cdf(v)).collect();
    let mut out = x.clone();
    for (o, c) in out.as_mut_slice().iter_mut().zip(&cdf) {
        *o *= c;
    }
    (
        out,
        GeluCache {
            input: x.clone(),
            cdf,
        },
    )
}

pub fn gelu_backward(grad_y: &Matrix, cache: &GeluCache) -> Result<Matrix> {
    if grad_y.shape() != cache.input.shape() {
        return Err(Error::shape(
            "gelu_backward",
            grad_y.shape_str(),
            cache.input.shape_str(),
        ));
    }
    let mut out = grad_y.clone();
    for ((g, &x), &c) in out
        .as_mut_slice()
        .iter_mut()
        .zip(cache.input.as_slice())
        .zip(&cache.cdf)
    {
        *g *= c + x * normal_pdf(x);
    }
    Ok(out)
}

/// Per-entry multipliers (0 or `1/(1-p)`); `None` when dropout is a no-op.
#[derive(Debug, Clone)]
pub struct DropoutCache {
    shape: (usize, usize),
    mask: Option<Vec<f64>>,
}

/// Inverted dropout. Eval mode and `p = 0` are exact identities and draw no
/// random numbers.
pub fn dropout_forward(
    x: &Matrix,
    p: f64,
    rng: &mut SeededRng,
    training: bool,
) -> Result<(Matrix, DropoutCache)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid("p", format!("dropout probability must be in [0, 1), got {p}")));
    }
    if !training || p == 0.0 {
        return Ok((
            x.clone(),
            DropoutCache {
                shape: x.shape(),
                mask: None,
            },
        ));
    }
    let keep_scale = 1.0 / (1.0 - p);
    // u < p for u uniform on [0, 1), compared in 64-bit fixed point
    let threshold = (p * 18_446_744_073_709_551_616.0) as u64;
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.next_u64() < threshold { 0.0 } else { keep_scale })
        .collect();
    let mut out = x.clone();
    for (o, m) in out.as_mut_slice().iter_mut().zip(&mask) {
        *o *= m;
    }
    Ok((
        out,
        DropoutCache {
            shape: x.shape(),
            mask: Some(mask),
        },
    ))
}

pub fn dropout_backward(grad_y: &Matrix, cache: &DropoutCache) -> Result<Matrix> {
    if grad_y.shape() != cache.shape {
        return Err(Error::shape(
            "dropout_backward",
            grad_y.shape_str(),
            format!("{}x{}", cache.shape.0, cache.shape.1),
        ));
    }
    let mut out = grad_y.clone();
    if let Some(mask) = &cache.mask {
        for (g, m) in out.as_mut_slice().iter_mut().zip(mask) {
            *g *= m;
        }
    }
    Ok(out)
}
