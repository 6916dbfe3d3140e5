//! The models the trainer can fit: ReLaMix and two reference baselines.

use crate::error::{Error, Result};
use crate::model::{backward, forward_batch, init_parameters, Ablation, ModelConfig, ParameterSet};
use crate::numerics::{linear_backward, linear_forward, Matrix, SeededRng};

/// Model family of a grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Relamix(Ablation),
    /// Repeats the last observed input row for every future step.
    Persistence,
    /// One affine map from the flattened window to the flattened forecast.
    Linear,
}

impl ModelKind {
    /// Canonical grid order: the three ReLaMix variants, then the baselines.
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Relamix(Ablation::Full),
        ModelKind::Relamix(Ablation::NoCompression),
        ModelKind::Relamix(Ablation::NoResidual),
        ModelKind::Persistence,
        ModelKind::Linear,
    ];

    /// Family name used in reports.
    pub fn model_name(self) -> &'static str {
        match self {
            ModelKind::Relamix(_) => "relamix",
            ModelKind::Persistence => "persistence",
            ModelKind::Linear => "linear",
        }
    }

    pub fn ablation(self) -> Option<Ablation> {
        match self {
            ModelKind::Relamix(a) => Some(a),
            _ => None,
        }
    }

    /// Short unique label, e.g. `relamix` or `relamix/no_residual`.
    pub fn label(self) -> String {
        match self {
            ModelKind::Relamix(Ablation::Full) => "relamix".into(),
            ModelKind::Relamix(a) => format!("relamix/{}", a.name()),
            other => other.model_name().into(),
        }
    }

    /// Inverse of [`ModelKind::label`].
    pub fn from_label(label: &str) -> Option<ModelKind> {
        ModelKind::ALL.into_iter().find(|m| m.label() == label)
    }

    /// Parses a comma-separated selection. Accepts `relamix` (all three
    /// variants), `full`, `no_compression`, `no_residual`, `ablations`,
    /// `baselines`, `persistence`, `linear` and `all`.
    pub fn parse_list(spec: &str) -> Result<Vec<ModelKind>> {
        let mut out = Vec::new();
        for token in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let add: &[ModelKind] = match token {
                "all" => &ModelKind::ALL,
                "relamix" => &ModelKind::ALL[..3],
                "full" | "relamix/full" => &ModelKind::ALL[..1],
                "no_compression" | "relamix/no_compression" => &ModelKind::ALL[1..2],
                "no_residual" | "relamix/no_residual" => &ModelKind::ALL[2..3],
                "ablations" => &ModelKind::ALL[1..3],
                "baselines" => &ModelKind::ALL[3..],
                "persistence" => &ModelKind::ALL[3..4],
                "linear" => &ModelKind::ALL[4..],
                other => {
                    return Err(Error::invalid("models", format!("unknown model `{other}`")));
                }
            };
            for m in add {
                if !out.contains(m) {
                    out.push(*m);
                }
            }
        }
        if out.is_empty() {
            return Err(Error::invalid("models", "no model selected"));
        }
        out.sort();
        Ok(out)
    }
}

/// A trainable (or trivially fixed) forecaster over `L x D_in` windows.
/// Predictions are `B x (k·D_out)` matrices, one flattened forecast per row.
#[derive(Debug, Clone)]
pub enum Forecaster {
    Relamix {
        config: ModelConfig,
        params: ParameterSet,
    },
    Persistence {
        config: ModelConfig,
    },
    Linear {
        config: ModelConfig,
        /// `(L·D_in) x (k·D_out)` weight, row-major, followed by the bias.
        params: Vec<f64>,
    },
}

impl Forecaster {
    /// Builds a freshly initialized model. For ReLaMix the ablation of `kind`
    /// overrides the one in `config`.
    pub fn new(kind: ModelKind, config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut config = config.clone();
        if let ModelKind::Relamix(a) = kind {
            config.ablation = a;
        }
        config.validate()?;
        Ok(match kind {
            ModelKind::Relamix(_) => Forecaster::Relamix {
                params: init_parameters(&config, seed)?,
                config,
            },
            ModelKind::Persistence => {
                if config.output_dim > config.input_dim {
                    return Err(Error::config(
                        "output_dim",
                        "persistence needs output_dim <= input_dim",
                    ));
                }
                Forecaster::Persistence { config }
            }
            ModelKind::Linear => {
                let fan_in = config.window_len * config.input_dim;
                let n = (fan_in + 1) * config.prediction_len();
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut rng = SeededRng::new(seed);
                let params = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
                Forecaster::Linear { config, params }
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Forecaster::Relamix { config, .. } => ModelKind::Relamix(config.ablation),
            Forecaster::Persistence { .. } => ModelKind::Persistence,
            Forecaster::Linear { .. } => ModelKind::Linear,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Forecaster::Relamix { config, .. }
            | Forecaster::Persistence { config }
            | Forecaster::Linear { config, .. } => config,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().len()
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Forecaster::Relamix { params, .. } => params.values(),
            Forecaster::Persistence { .. } => &[],
            Forecaster::Linear { params, .. } => params,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Forecaster::Relamix { params, .. } => params.values_mut(),
            Forecaster::Persistence { .. } => &mut [],
            Forecaster::Linear { params, .. } => params,
        }
    }

    fn linear_parts(config: &ModelConfig, params: &[f64]) -> Result<(Matrix, Vec<f64>)> {
        let fan_in = config.window_len * config.input_dim;
        let out = config.prediction_len();
        let w = Matrix::from_vec(fan_in, out, params[..fan_in * out].to_vec())?;
        Ok((w, params[fan_in * out..].to_vec()))
    }

    fn flatten(config: &ModelConfig, windows: &[&Matrix]) -> Result<Matrix> {
        for w in windows {
            if w.shape() != (config.window_len, config.input_dim) {
                return Err(Error::shape(
                    "forecaster input",
                    w.shape_str(),
                    format!("{}x{}", config.window_len, config.input_dim),
                ));
            }
        }
        // stacking L x D_in windows then reshaping keeps each window's rows contiguous
        Matrix::vstack(windows)?.reshape(windows.len(), config.window_len * config.input_dim)
    }

    /// Forward pass. `training` enables dropout (ReLaMix only).
    pub fn predict(&self, windows: &[&Matrix], rng: &mut SeededRng, training: bool) -> Result<Matrix> {
        if windows.is_empty() {
            return Err(Error::invalid("windows", "batch is empty"));
        }
        match self {
            Forecaster::Relamix { config, params } => {
                Ok(forward_batch(config, params, windows, rng, training)?.0)
            }
            Forecaster::Persistence { config } => {
                let k = config.horizon;
                let d = config.output_dim;
                let mut out = Matrix::zeros(windows.len(), k * d);
                for (b, w) in windows.iter().enumerate() {
                    if w.shape() != (config.window_len, config.input_dim) {
                        return Err(Error::shape(
                            "persistence",
                            w.shape_str(),
                            format!("{}x{}", config.window_len, config.input_dim),
                        ));
                    }
                    let last = &w.row(w.rows() - 1)[..d];
                    for step in out.row_mut(b).chunks_mut(d) {
                        step.copy_from_slice(last);
                    }
                }
                Ok(out)
            }
            Forecaster::Linear { config, params } => {
                let x = Self::flatten(config, windows)?;
                let (w, b) = Self::linear_parts(config, params)?;
                Ok(linear_forward(&x, &w, &b)?.0)
            }
        }
    }

    /// Training-mode forward pass followed by the exact gradient of the loss
    /// whose derivative with respect to the predictions is `loss_grad(preds)`.
    pub fn loss_and_gradient<F>(
        &self,
        windows: &[&Matrix],
        rng: &mut SeededRng,
        loss_grad: F,
    ) -> Result<(f64, Vec<f64>)>
    where
        F: FnOnce(&Matrix) -> Result<(f64, Matrix)>,
    {
        match self {
            Forecaster::Relamix { config, params } => {
                let (pred, trace) = forward_batch(config, params, windows, rng, true)?;
                let (loss, grad) = loss_grad(&pred)?;
                let grads = backward(config, params, trace, &grad)?;
                Ok((loss, grads.values().to_vec()))
            }
            Forecaster::Persistence { .. } => {
                let pred = self.predict(windows, rng, true)?;
                Ok((loss_grad(&pred)?.0, Vec::new()))
            }
            Forecaster::Linear { config, params } => {
                let x = Self::flatten(config, windows)?;
                let (w, b) = Self::linear_parts(config, params)?;
                let (pred, cache) = linear_forward(&x, &w, &b)?;
                let (loss, grad) = loss_grad(&pred)?;
                let g = linear_backward(&grad, &cache)?;
                let mut flat = g.weight.into_vec();
                flat.extend_from_slice(&g.bias);
                Ok((loss, flat))
            }
        }
    }
}
