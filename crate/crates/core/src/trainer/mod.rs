//! Corrupted-to-clean training, evaluation metrics, reference baselines and
//! the delay-ratio × horizon experiment grid.

mod forecaster;
mod grid;
mod metrics;
mod report;
mod train;

pub use forecaster::{Forecaster, ModelKind};
pub use grid::{
    cell_seed, json_digest, mask_seed, prepare_data, run_cell, run_grid, sort_reports,
    window_spec, CellFailure, CellOutcome, CellResult, CellSpec, DataConfig, DataSource, EvalReport,
    FeatureMetrics, GridConfig, GridOutcome, PreparedData, RawMetrics, WindowSets,
};
pub use metrics::{metrics, mse_loss, per_feature_metrics, Metrics};
pub use report::{read_reports_csv, render_table, write_reports_csv};
pub use train::{
    evaluate, evaluate_raw, predict_all, train, validation_loss, EpochRecord, Evaluation, TrainConfig,
    TrainHistory,
};
