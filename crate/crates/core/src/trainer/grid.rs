//! Data preparation for delayed-input experiments and the ablation grid.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::forecaster::{Forecaster, ModelKind};
use super::metrics::Metrics;
use super::train::{evaluate, evaluate_raw, train, Evaluation, TrainConfig, TrainHistory};
use crate::data::{
    chronological_split, load_csv, make_windows, synth_series, Standardizer, SynthKind,
    SynthParams, TimeSeries, WindowMode, WindowSample, WindowSpec, DEFAULT_SPLIT,
};
use crate::delay_sim::{apply_zoh, generate_mask, StagnationMask};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::{mix64, SeededRng};

/// Where the clean series comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synth {
        kind: SynthKind,
        /// Defaults to the kind's benchmark length.
        #[serde(default)]
        length: Option<usize>,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        params: SynthParams,
    },
    Csv {
        path: PathBuf,
    },
}

impl DataSource {
    pub fn synth(kind: SynthKind, length: Option<usize>, seed: u64) -> Self {
        DataSource::Synth {
            kind,
            length,
            seed,
            params: SynthParams::default(),
        }
    }

    pub fn load(&self) -> Result<TimeSeries> {
        match self {
            DataSource::Synth {
                kind,
                length,
                seed,
                params,
            } => synth_series(*kind, length.unwrap_or(kind.default_length()), *seed, params),
            DataSource::Csv { path } => load_csv(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Train/validation/test fractions.
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::synth(SynthKind::GbmOhlcv, None, 0),
            split: DEFAULT_SPLIT,
        }
    }
}

/// A delayed series split chronologically and standardized with statistics
/// of the clean training segment.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub mask: StagnationMask,
    pub scaler: Standardizer,
    /// Corrupted train/validation/test segments (standardized).
    pub observed: [TimeSeries; 3],
    /// Clean train/validation/test segments (standardized).
    pub clean: [TimeSeries; 3],
}

/// Corrupts `clean` with an i.i.d. stagnation mask, splits both versions
/// chronologically and standardizes them. Each split must hold at least
/// `min_len` rows.
pub fn prepare_data(
    clean: &TimeSeries,
    delay_ratio: f64,
    mask_seed: u64,
    split: [f64; 3],
    min_len: usize,
) -> Result<PreparedData> {
    let mask = generate_mask(clean.len(), delay_ratio, mask_seed)?;
    let observed = apply_zoh(clean, &mask)?.observed;
    let [otr, ova, ote] = chronological_split(&observed, split, min_len)?;
    let [ctr, cva, cte] = chronological_split(clean, split, min_len)?;
    let scaler = Standardizer::fit(&ctr)?;
    Ok(PreparedData {
        observed: [scaler.apply(&otr)?, scaler.apply(&ova)?, scaler.apply(&ote)?],
        clean: [scaler.apply(&ctr)?, scaler.apply(&cva)?, scaler.apply(&cte)?],
        mask,
        scaler,
    })
}

/// Windows of one horizon: dense training windows, eval-stride validation
/// and test windows.
#[derive(Debug, Clone)]
pub struct WindowSets {
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

impl PreparedData {
    pub fn windows(&self, spec: WindowSpec) -> Result<WindowSets> {
        Ok(WindowSets {
            train: make_windows(&self.observed[0], &self.clean[0], spec, WindowMode::Train)?,
            val: make_windows(&self.observed[1], &self.clean[1], spec, WindowMode::Eval)?,
            test: make_windows(&self.observed[2], &self.clean[2], spec, WindowMode::Eval)?,
        })
    }
}

pub fn window_spec(cfg: &ModelConfig) -> WindowSpec {
    WindowSpec {
        input_len: cfg.window_len,
        horizon: cfg.horizon,
        output_dim: cfg.output_dim,
    }
}

/// Seed of the stagnation mask shared by every cell with this
/// `(seed, delay_ratio)` pair.
pub fn mask_seed(seed: u64, delay_ratio: f64) -> u64 {
    mix64(seed ^ mix64(delay_ratio.to_bits()))
}

/// Seed for model initialization and training of one cell.
pub fn cell_seed(seed: u64, delay_ratio: f64, horizon: usize, kind: ModelKind) -> u64 {
    let code = ModelKind::ALL.iter().position(|m| *m == kind).unwrap_or(0) as u64;
    let key = mix64(delay_ratio.to_bits()) ^ ((horizon as u64) << 8) ^ code;
    SeededRng::new(seed).split(key).next_u64()
}

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn json_digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("value serializes");
    hex::encode(Sha256::digest(&json))
}

/// Experiment grid: every model at every delay ratio, horizon and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Base architecture; `horizon` and `ablation` are set per cell.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub delay_ratios: Vec<f64>,
    pub horizons: Vec<usize>,
    /// Model selection tokens, see [`ModelKind::parse_list`].
    pub models: Vec<String>,
    pub seeds: Vec<u64>,
    /// Also score every cell in the original data units.
    pub raw_metrics: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            delay_ratios: vec![0.15, 0.25, 0.35],
            horizons: vec![1, 5, 7, 10],
            models: vec!["all".into()],
            seeds: vec![0],
            raw_metrics: false,
        }
    }
}

impl GridConfig {
    pub fn model_kinds(&self) -> Result<Vec<ModelKind>> {
        ModelKind::parse_list(&self.models.join(","))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.model_kinds()?;
        if self.delay_ratios.is_empty() || self.horizons.is_empty() || self.seeds.is_empty() {
            return Err(Error::config(
                "grid",
                "delay_ratios, horizons and seeds must be non-empty",
            ));
        }
        if let Some(r) = self.delay_ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::config("delay_ratios", format!("{r} is not in [0, 1)")));
        }
        if self.horizons.contains(&0) {
            return Err(Error::config("horizons", "horizons must be positive"));
        }
        for &k in &self.horizons {
            ModelConfig {
                horizon: k,
                ..self.model.clone()
            }
            .validate()?;
        }
        Ok(())
    }

    /// Number of cells the grid will produce.
    pub fn cell_count(&self) -> Result<usize> {
        Ok(self.model_kinds()?.len() * self.delay_ratios.len() * self.horizons.len() * self.seeds.len())
    }
}

/// Result of one grid cell. Field names are part of the report format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub ablation: Option<String>,
    pub delay_ratio: f64,
    pub k: usize,
    pub mse: f64,
    pub mae: f64,
    pub r2: Option<f64>,
    pub params: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mask_hash: String,
    pub config_hash: String,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub test_windows: usize,
    pub per_feature: Vec<FeatureMetrics>,
    /// Scores in the original units, present when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<RawMetrics>,
    pub wall_time: f64,
}

/// Metrics computed after undoing standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMetrics {
    #[serde(flatten)]
    pub metrics: Metrics,
    pub per_feature: Vec<FeatureMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMetrics {
    pub feature: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

impl EvalReport {
    pub fn kind(&self) -> Option<ModelKind> {
        let label = match &self.ablation {
            Some(a) if a != "full" => format!("{}/{a}", self.model),
            _ => self.model.clone(),
        };
        ModelKind::from_label(&label)
    }

    /// Canonical ordering key: model, ratio, horizon, seed.
    pub fn sort_key(&self) -> (usize, u64, usize, u64) {
        let rank = self
            .kind()
            .and_then(|k| ModelKind::ALL.iter().position(|m| *m == k))
            .unwrap_or(usize::MAX);
        (rank, self.delay_ratio.to_bits(), self.k, self.seed)
    }
}

/// Sorts reports into the canonical (model, ratio, k, seed) order.
pub fn sort_reports(reports: &mut [EvalReport]) {
    reports.sort_by(|a, b| {
        a.sort_key()
            .cmp(&b.sort_key())
            .then_with(|| a.model.cmp(&b.model))
            .then_with(|| a.ablation.cmp(&b.ablation))
    });
}

/// A cell that could not be completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub model: String,
    pub delay_ratio: f64,
    pub k: usize,
    pub seed: u64,
    pub error: String,
    /// True when the error was a non-finite loss.
    pub numeric: bool,
}

/// One finished cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub report: EvalReport,
    pub history: TrainHistory,
    pub model: Forecaster,
}

#[derive(Debug, Clone)]
pub enum CellOutcome {
    Done(Box<CellResult>),
    Failed(CellFailure),
}

/// Identity and settings of one grid cell.
#[derive(Debug, Clone, Copy)]
pub struct CellSpec<'a> {
    pub kind: ModelKind,
    /// Architecture with the cell's horizon.
    pub model: &'a ModelConfig,
    pub train: &'a TrainConfig,
    pub delay_ratio: f64,
    pub seed: u64,
    pub mask_hash: &'a str,
    /// Names of the output features, for per-feature metrics.
    pub feature_names: &'a [String],
    /// When set, the report also carries metrics in original units.
    pub raw_scaler: Option<&'a Standardizer>,
}

/// Trains one model and scores it on `eval`.
pub fn run_cell(
    spec: CellSpec<'_>,
    train_set: &[WindowSample],
    val: &[WindowSample],
    eval: &[WindowSample],
) -> Result<CellResult> {
    let CellSpec {
        kind,
        model: model_cfg,
        train: train_cfg,
        delay_ratio,
        seed,
        mask_hash,
        feature_names,
        raw_scaler,
    } = spec;
    let start = Instant::now();
    let cs = cell_seed(seed, delay_ratio, model_cfg.horizon, kind);
    let model = Forecaster::new(kind, model_cfg, cs)?;
    let tc = TrainConfig {
        seed: mix64(cs),
        ..train_cfg.clone()
    };
    let config_hash = json_digest(&(model.config(), &tc));
    let (model, history) = train(model, &tc, train_set, val)?;
    let named = |e: &Evaluation| -> Vec<FeatureMetrics> {
        e.per_feature
            .iter()
            .zip(feature_names)
            .map(|(m, f)| FeatureMetrics {
                feature: f.clone(),
                metrics: *m,
            })
            .collect()
    };
    let raw = match raw_scaler {
        Some(sc) => {
            let e = evaluate_raw(&model, eval, tc.eval_batch_size, sc)?;
            Some(RawMetrics {
                metrics: e.metrics,
                per_feature: named(&e),
            })
        }
        None => None,
    };
    let eval = evaluate(&model, eval, tc.eval_batch_size)?;
    let report = EvalReport {
        model: kind.model_name().into(),
        ablation: kind.ablation().map(|a| a.name().to_string()),
        delay_ratio,
        k: model_cfg.horizon,
        mse: eval.metrics.mse,
        mae: eval.metrics.mae,
        r2: eval.metrics.r2,
        params: model.param_count(),
        epochs: history.epochs_run(),
        seed,
        mask_hash: mask_hash.to_string(),
        config_hash,
        best_epoch: history.best_epoch,
        best_val_loss: history.best_val_loss,
        test_windows: eval.samples,
        per_feature: named(&eval),
        raw,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok(CellResult {
        report,
        history,
        model,
    })
}

/// Full grid outcome in canonical order.
#[derive(Debug, Clone, Default)]
pub struct GridOutcome {
    pub reports: Vec<EvalReport>,
    pub failures: Vec<CellFailure>,
}

/// Runs every cell of `cfg` on `clean`. Cells sharing a `(seed, ratio)` pair
/// use the same stagnation mask. A failing cell is recorded and the grid
/// continues. `on_cell` sees each outcome as soon as it is available.
pub fn run_grid(
    cfg: &GridConfig,
    clean: &TimeSeries,
    mut on_cell: impl FnMut(&CellOutcome),
) -> Result<GridOutcome> {
    cfg.validate()?;
    let kinds = cfg.model_kinds()?;
    // horizons too long for the splits fail individually at window extraction
    let min_k = *cfg.horizons.iter().min().expect("validated non-empty");
    let min_len = cfg.model.window_len + min_k;
    let out_names: Vec<String> = clean
        .feature_names()
        .iter()
        .take(cfg.model.output_dim)
        .cloned()
        .collect();
    let mut outcome = GridOutcome::default();

    for &seed in &cfg.seeds {
        for &ratio in &cfg.delay_ratios {
            let prepared = prepare_data(clean, ratio, mask_seed(seed, ratio), cfg.data.split, min_len);
            for &k in &cfg.horizons {
                let model_cfg = ModelConfig {
                    horizon: k,
                    ..cfg.model.clone()
                };
                let windows = prepared
                    .as_ref()
                    .map_err(|e| e.to_string())
                    .and_then(|p| p.windows(window_spec(&model_cfg)).map_err(|e| e.to_string()));
                for &kind in &kinds {
                    let result = match (&prepared, &windows) {
                        (Ok(p), Ok(w)) => run_cell(
                            CellSpec {
                                kind,
                                model: &model_cfg,
                                train: &cfg.train,
                                delay_ratio: ratio,
                                seed,
                                mask_hash: &p.mask.hash(),
                                feature_names: &out_names,
                                raw_scaler: cfg.raw_metrics.then_some(&p.scaler),
                            },
                            &w.train,
                            &w.val,
                            &w.test,
                        )
                        .map_err(|e| (matches!(e, Error::NonFinite(_)), e.to_string())),
                        (_, Err(e)) => Err((false, e.clone())),
                        (Err(e), _) => Err((false, e.to_string())),
                    };
                    let cell = match result {
                        Ok(r) => CellOutcome::Done(Box::new(r)),
                        Err((numeric, error)) => CellOutcome::Failed(CellFailure {
                            model: kind.label(),
                            delay_ratio: ratio,
                            k,
                            seed,
                            error,
                            numeric,
                        }),
                    };
                    on_cell(&cell);
                    match cell {
                        CellOutcome::Done(r) => outcome.reports.push(r.report),
                        CellOutcome::Failed(f) => outcome.failures.push(f),
                    }
                }
            }
        }
    }
    sort_reports(&mut outcome.reports);
    Ok(outcome)
}
