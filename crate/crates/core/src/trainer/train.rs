//! Minibatch training with early stopping, and evaluation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::forecaster::Forecaster;
use super::metrics::{metrics, mse_loss, per_feature_metrics, Metrics};
use crate::data::{Standardizer, WindowSample};
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, Matrix, SeededRng};

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Reshuffle the training windows every epoch.
    pub shuffle: bool,
    /// Caps the minibatches drawn per epoch; each epoch still sees a fresh
    /// shuffled order. `None` means a full pass.
    pub max_batches_per_epoch: Option<usize>,
    /// Batch size for validation and test forward passes.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            shuffle: true,
            max_batches_per_epoch: None,
            eval_batch_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate", "must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience", "must be at least 1"));
        }
        if self.eval_batch_size == 0 {
            return Err(Error::config("eval_batch_size", "must be at least 1"));
        }
        if self.max_batches_per_epoch == Some(0) {
            return Err(Error::config("max_batches_per_epoch", "must be at least 1 when set"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based; 0 when nothing was trained).
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainHistory {
    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }

    /// Writes `epoch,train_loss,val_loss` rows.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "epoch,train_loss,val_loss")?;
        for r in &self.epochs {
            writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_loss)?;
        }
        Ok(())
    }
}

/// Stacks the targets of `samples` into one flattened forecast per row.
fn stack_targets(samples: &[&WindowSample]) -> Result<Matrix> {
    let parts: Vec<&Matrix> = samples.iter().map(|s| &s.target).collect();
    let m = Matrix::vstack(&parts)?;
    let cols = m.len() / samples.len();
    m.reshape(samples.len(), cols)
}

/// Eval-mode predictions and stacked targets for every sample, in order.
pub fn predict_all(
    model: &Forecaster,
    samples: &[WindowSample],
    batch_size: usize,
) -> Result<(Matrix, Matrix)> {
    if samples.is_empty() {
        return Err(Error::Data("no windows to evaluate".into()));
    }
    let cols = model.config().prediction_len();
    let mut preds = Vec::with_capacity(samples.len() * cols);
    let mut targets = Vec::with_capacity(samples.len() * cols);
    // dropout is off, so this stream is never drawn from
    let mut rng = SeededRng::new(0);
    for chunk in samples.chunks(batch_size.max(1)) {
        let inputs: Vec<&Matrix> = chunk.iter().map(|s| &s.input).collect();
        let p = model.predict(&inputs, &mut rng, false)?;
        preds.extend_from_slice(p.as_slice());
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        targets.extend_from_slice(stack_targets(&refs)?.as_slice());
    }
    Ok((
        Matrix::from_vec(samples.len(), cols, preds)?,
        Matrix::from_vec(samples.len(), cols, targets)?,
    ))
}

/// Mean per-sample MSE with dropout disabled.
pub fn validation_loss(model: &Forecaster, samples: &[WindowSample], batch_size: usize) -> Result<f64> {
    let (p, t) = predict_all(model, samples, batch_size)?;
    Ok(mse_loss(&p, &t)?.0)
}

/// Fits `model` on `train` and returns it with the parameters that reached
/// the lowest validation loss.
pub fn train(
    mut model: Forecaster,
    cfg: &TrainConfig,
    train: &[WindowSample],
    val: &[WindowSample],
) -> Result<(Forecaster, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("no training windows".into()));
    }
    if val.is_empty() {
        return Err(Error::Data("no validation windows".into()));
    }
    let initial_val = validation_loss(&model, val, cfg.eval_batch_size)?;
    if model.param_count() == 0 {
        return Ok((
            model,
            TrainHistory {
                epochs: Vec::new(),
                best_epoch: 0,
                best_val_loss: initial_val,
            },
        ));
    }

    let root = SeededRng::new(cfg.seed);
    let mut order_rng = root.split(1);
    let mut dropout_rng = root.split(2);
    let mut adam = AdamState::new(
        model.param_count(),
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: initial_val,
    };
    let mut best = model.params().to_vec();
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        if cfg.shuffle {
            order_rng.shuffle(&mut order);
        }
        let mut batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        if let Some(cap) = cfg.max_batches_per_epoch {
            batches.truncate(cap);
        }
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (bi, idx) in batches.into_iter().enumerate() {
            let samples: Vec<&WindowSample> = idx.iter().map(|&i| &train[i]).collect();
            let inputs: Vec<&Matrix> = samples.iter().map(|s| &s.input).collect();
            let target = stack_targets(&samples)?;
            let (loss, grads) =
                model.loss_and_gradient(&inputs, &mut dropout_rng, |p| mse_loss(p, &target))?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {loss} at epoch {epoch}, batch {bi}"
                )));
            }
            adam.step(model.params_mut(), &grads)?;
            loss_sum += loss * samples.len() as f64;
            seen += samples.len();
        }
        let val_loss = validation_loss(&model, val, cfg.eval_batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "validation loss {val_loss} after epoch {epoch}"
            )));
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_loss,
        });
        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best.copy_from_slice(model.params());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    model.params_mut().copy_from_slice(&best);
    Ok((model, history))
}

/// Test-set scores of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub per_feature: Vec<Metrics>,
    pub samples: usize,
}

/// Scores `model` on eval-stride windows with dropout disabled.
pub fn evaluate(model: &Forecaster, samples: &[WindowSample], batch_size: usize) -> Result<Evaluation> {
    let (p, t) = predict_all(model, samples, batch_size)?;
    Ok(Evaluation {
        metrics: metrics(&p, &t)?,
        per_feature: per_feature_metrics(&p, &t, model.config().output_dim)?,
        samples: samples.len(),
    })
}

/// Like [`evaluate`], but scores predictions and targets mapped back to
/// the original units through `scaler`.
pub fn evaluate_raw(
    model: &Forecaster,
    samples: &[WindowSample],
    batch_size: usize,
    scaler: &Standardizer,
) -> Result<Evaluation> {
    let d_out = model.config().output_dim;
    if d_out > scaler.dim() {
        return Err(Error::shape(
            "evaluate_raw",
            format!("at most {} output features", scaler.dim()),
            format!("{d_out}"),
        ));
    }
    let (mut p, mut t) = predict_all(model, samples, batch_size)?;
    for m in [&mut p, &mut t] {
        for r in 0..m.rows() {
            for (c, v) in m.row_mut(r).iter_mut().enumerate() {
                let f = c % d_out;
                *v = *v * scaler.std[f] + scaler.mean[f];
            }
        }
    }
    Ok(Evaluation {
        metrics: metrics(&p, &t)?,
        per_feature: per_feature_metrics(&p, &t, d_out)?,
        samples: samples.len(),
    })
}
