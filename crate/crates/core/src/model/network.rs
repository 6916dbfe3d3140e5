//! Forward and backward passes of the mixing network.
//!
//! A batch of `B` windows is processed as one stacked `(B·L) x width` matrix
//! so feature-axis operations run as single products. Time mixing works on
//! the per-sample transpose, a `(B·width) x L` matrix.
//!
//! Per block, with `T` the per-sample transpose:
//!
//! ```text
//! H_temp = T(dropout(gelu(T(LN(H)) · W_t + b_t)))
//! H_time = H + H_temp
//! H_exp  = dropout(gelu(LN(H_time) · W_exp + b_exp))
//! H_comp = H_exp · W_comp + b_comp
//! H'     = H_time + H_comp + α · Σ_{j<l} g_j(H^(j))
//! ```
//!
//! `no_residual` drops both residual adds and the skip sum.

use super::config::ModelConfig;
use super::params::{LinearSlots, NormSlots, ParameterSet};
use crate::error::{Error, Result};
use crate::numerics::{
    dropout_backward, dropout_forward, gelu_backward, gelu_forward, layernorm_backward,
    layernorm_forward, linear_backward, linear_forward, transpose_blocks, DropoutCache, GeluCache,
    LayerNormCache, LinearCache, Matrix, SeededRng, LAYERNORM_EPS,
};

#[derive(Debug, Clone)]
struct BlockTrace {
    time_norm: LayerNormCache,
    time_mix: LinearCache,
    time_act: GeluCache,
    time_drop: DropoutCache,
    feature_norm: LayerNormCache,
    expand: LinearCache,
    expand_act: GeluCache,
    expand_drop: DropoutCache,
    compress: LinearCache,
}

/// Everything backward needs from one forward call. Consumed by
/// [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    batch: usize,
    config_hash: String,
    input: LinearCache,
    input_act: GeluCache,
    blocks: Vec<BlockTrace>,
    skips: Vec<LinearCache>,
    head: LinearCache,
    /// `H^(0) ..= H^(n_blocks)`, each `(B·L) x width`.
    pub hidden: Vec<Matrix>,
    /// Cumulative skip signals `S^(1) ..= S^(n_blocks)` (empty without residuals).
    pub skip_sums: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.batch
    }
}

fn linear(x: &Matrix, p: &ParameterSet, s: LinearSlots) -> Result<(Matrix, LinearCache)> {
    linear_forward(x, &p.matrix(s.weight), p.slice(s.bias))
}

fn norm(x: &Matrix, p: &ParameterSet, s: NormSlots) -> Result<(Matrix, LayerNormCache)> {
    layernorm_forward(x, p.slice(s.gamma), p.slice(s.beta), LAYERNORM_EPS)
}

fn check_params(cfg: &ModelConfig, params: &ParameterSet) -> Result<()> {
    let l = params.layout();
    if l.blocks.len() != cfg.n_blocks
        || l.skips.len() != if cfg.has_residual() { cfg.n_blocks } else { 0 }
        || l.slot(l.input.weight).rows != cfg.input_dim
        || l.slot(l.input.weight).cols != cfg.latent_dim()
        || l.slot(l.head.weight).cols != cfg.prediction_len()
        || l.blocks.first().map(|b| l.slot(b.time_mix.weight).rows) != Some(cfg.window_len)
        || l.blocks.first().map(|b| l.slot(b.expand.weight).cols) != Some(cfg.model_dim)
    {
        return Err(Error::ParamFile(
            "parameter layout does not match the model config".into(),
        ));
    }
    Ok(())
}

/// Runs a batch of `L x D_in` windows. Returns predictions as a
/// `B x (k·D_out)` matrix (row `b` is sample `b`'s `k x D_out` prediction,
/// flattened row-major) and the trace for [`backward`].
pub fn forward_batch(
    cfg: &ModelConfig,
    params: &ParameterSet,
    windows: &[&Matrix],
    rng: &mut SeededRng,
    training: bool,
) -> Result<(Matrix, ForwardTrace)> {
    check_params(cfg, params)?;
    if windows.is_empty() {
        return Err(Error::invalid("windows", "batch is empty"));
    }
    for w in windows {
        if w.shape() != (cfg.window_len, cfg.input_dim) {
            return Err(Error::shape(
                "forward",
                w.shape_str(),
                format!("{}x{}", cfg.window_len, cfg.input_dim),
            ));
        }
        if !w.is_finite() {
            return Err(Error::NonFinite("input window contains NaN or infinity".into()));
        }
    }
    let batch = windows.len();
    let l = cfg.window_len;
    let layout = params.layout().clone();
    let residual = cfg.has_residual();

    let x = Matrix::vstack(windows)?;
    let (pre, input_cache) = linear(&x, params, layout.input)?;
    let (mut h, input_act) = gelu_forward(&pre);

    let mut hidden = vec![h.clone()];
    let mut blocks = Vec::with_capacity(cfg.n_blocks);
    let mut skips = Vec::new();
    let mut skip_sums = Vec::new();
    let mut skip_acc: Option<Matrix> = None;

    for (bi, bs) in layout.blocks.iter().enumerate() {
        if residual {
            // g_j(H^(j)) is computed once and reused by every later block
            let (proj, cache) = linear(&h, params, layout.skips[bi])?;
            skips.push(cache);
            match skip_acc.as_mut() {
                Some(acc) => acc.add_assign(&proj)?,
                None => skip_acc = Some(proj),
            }
        }

        // time mixing
        let (normed, time_norm) = norm(&h, params, bs.time_norm)?;
        let per_channel = transpose_blocks(&normed, batch);
        let (mixed, time_mix) = linear(&per_channel, params, bs.time_mix)?;
        let (act, time_act) = gelu_forward(&mixed);
        let (dropped, time_drop) = dropout_forward(&act, cfg.dropout, rng, training)?;
        let h_temp = transpose_blocks(&dropped, batch);
        let h_time = if residual {
            let mut t = h;
            t.add_assign(&h_temp)?;
            t
        } else {
            h_temp
        };

        // feature mixing
        let (normed, feature_norm) = norm(&h_time, params, bs.feature_norm)?;
        let (expanded, expand) = linear(&normed, params, bs.expand)?;
        let (act, expand_act) = gelu_forward(&expanded);
        let (dropped, expand_drop) = dropout_forward(&act, cfg.dropout, rng, training)?;
        let (h_comp, compress) = linear(&dropped, params, bs.compress)?;
        h = if residual {
            let mut out = h_time;
            out.add_assign(&h_comp)?;
            let acc = skip_acc.as_ref().expect("skip accumulator");
            out.add_scaled(acc, cfg.alpha)?;
            let mut s = acc.clone();
            s.scale(cfg.alpha);
            skip_sums.push(s);
            out
        } else {
            h_comp
        };
        hidden.push(h.clone());
        blocks.push(BlockTrace {
            time_norm,
            time_mix,
            time_act,
            time_drop,
            feature_norm,
            expand,
            expand_act,
            expand_drop,
            compress,
        });
    }

    // head reads the last time step of each sample
    let width = h.cols();
    let mut last = Matrix::zeros(batch, width);
    for b in 0..batch {
        last.row_mut(b).copy_from_slice(h.row(b * l + l - 1));
    }
    let (pred, head) = linear(&last, params, layout.head)?;
    Ok((
        pred,
        ForwardTrace {
            batch,
            config_hash: cfg.hash(),
            input: input_cache,
            input_act,
            blocks,
            skips,
            head,
            hidden,
            skip_sums,
        },
    ))
}

/// Single-window forward; the prediction is `k x D_out`.
pub fn forward(
    cfg: &ModelConfig,
    params: &ParameterSet,
    window: &Matrix,
    rng: &mut SeededRng,
    training: bool,
) -> Result<(Matrix, ForwardTrace)> {
    let (pred, trace) = forward_batch(cfg, params, &[window], rng, training)?;
    Ok((pred.reshape(cfg.horizon, cfg.output_dim)?, trace))
}

fn accumulate_linear(grads: &mut ParameterSet, s: LinearSlots, g: &crate::numerics::LinearGrads) {
    grads.accumulate(s.weight, g.weight.as_slice());
    grads.accumulate(s.bias, &g.bias);
}

/// Exact reverse pass. `grad_prediction` is `B x (k·D_out)`, or `k x D_out`
/// for a single-window trace.
pub fn backward(
    cfg: &ModelConfig,
    params: &ParameterSet,
    trace: ForwardTrace,
    grad_prediction: &Matrix,
) -> Result<ParameterSet> {
    check_params(cfg, params)?;
    if trace.config_hash != cfg.hash() || trace.blocks.len() != cfg.n_blocks {
        return Err(Error::invalid("trace", "trace was produced under a different config"));
    }
    let batch = trace.batch;
    let out = cfg.prediction_len();
    let grad_pred = if grad_prediction.shape() == (batch, out) {
        grad_prediction.clone()
    } else if batch == 1 && grad_prediction.shape() == (cfg.horizon, cfg.output_dim) {
        grad_prediction.clone().reshape(1, out)?
    } else {
        return Err(Error::shape(
            "backward",
            grad_prediction.shape_str(),
            format!("{batch}x{out}"),
        ));
    };
    let layout = params.layout().clone();
    let residual = cfg.has_residual();
    let l = cfg.window_len;
    let width = cfg.latent_dim();
    let mut grads = ParameterSet::zeros_like(params);

    let g = linear_backward(&grad_pred, &trace.head)?;
    accumulate_linear(&mut grads, layout.head, &g);
    // dL/dH^(n): only the last row of each sample feeds the head
    let mut grad_h = Matrix::zeros(batch * l, width);
    for b in 0..batch {
        grad_h.row_mut(b * l + l - 1).copy_from_slice(g.input.row(b));
    }

    // running Σ_{l' > j} dL/dH^(l'), the upstream gradient of every skip
    // projection g_j sourced at or below the current level
    let mut skip_upstream = Matrix::zeros(batch * l, width);

    for (bi, bt) in trace.blocks.iter().enumerate().rev() {
        let bs = layout.blocks[bi];
        if residual {
            skip_upstream.add_assign(&grad_h)?;
        }

        // H' = H_time + H_comp (+ S): both branches see grad_h
        let g_comp = linear_backward(&grad_h, &bt.compress)?;
        accumulate_linear(&mut grads, bs.compress, &g_comp);
        let g = dropout_backward(&g_comp.input, &bt.expand_drop)?;
        let g = gelu_backward(&g, &bt.expand_act)?;
        let g_exp = linear_backward(&g, &bt.expand)?;
        accumulate_linear(&mut grads, bs.expand, &g_exp);
        let g_ln = layernorm_backward(&g_exp.input, &bt.feature_norm)?;
        grads.accumulate(bs.feature_norm.gamma, &g_ln.gamma);
        grads.accumulate(bs.feature_norm.beta, &g_ln.beta);
        let mut grad_time = g_ln.input;
        if residual {
            grad_time.add_assign(&grad_h)?;
        }

        // H_time = H + H_temp
        let g = transpose_blocks(&grad_time, batch);
        let g = dropout_backward(&g, &bt.time_drop)?;
        let g = gelu_backward(&g, &bt.time_act)?;
        let g_mix = linear_backward(&g, &bt.time_mix)?;
        accumulate_linear(&mut grads, bs.time_mix, &g_mix);
        let g = transpose_blocks(&g_mix.input, batch);
        let g_ln = layernorm_backward(&g, &bt.time_norm)?;
        grads.accumulate(bs.time_norm.gamma, &g_ln.gamma);
        grads.accumulate(bs.time_norm.beta, &g_ln.beta);
        let mut grad_prev = g_ln.input;
        if residual {
            grad_prev.add_assign(&grad_time)?;
            // H^(bi) also feeds α·g_bi into every later level
            let mut upstream = skip_upstream.clone();
            upstream.scale(cfg.alpha);
            let g_skip = linear_backward(&upstream, &trace.skips[bi])?;
            accumulate_linear(&mut grads, layout.skips[bi], &g_skip);
            grad_prev.add_assign(&g_skip.input)?;
        }
        grad_h = grad_prev;
    }

    let g = gelu_backward(&grad_h, &trace.input_act)?;
    let g_in = linear_backward(&g, &trace.input)?;
    accumulate_linear(&mut grads, layout.input, &g_in);
    Ok(grads)
}
