use std::fs;
use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};

use relamix::data::{write_csv, TimeSeries};
use relamix::delay_sim::{apply_zoh, generate_mask, staleness_stats};
use relamix::model::save_parameters;
use relamix::trainer::{
    cell_seed, mask_seed, prepare_data, render_table, run_cell, run_grid,
    sort_reports, window_spec, write_reports_csv, CellOutcome, CellSpec, DataConfig, DataSource,
    EvalReport, Forecaster, GridConfig, ModelKind, TrainConfig,
};
use relamix::Error;
use serde::{Deserialize, Serialize};

use crate::manifest::{hash_file, InputFile, RunManifest};
use crate::{Format, GridArgs, ReportArgs, SimulateArgs, SourceArgs, TrainArgs};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError { code: 3, message: message.into() }
    }

    pub fn internal(e: impl std::fmt::Display) -> Self {
        CliError { code: 1, message: e.to_string() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NonFinite(_) => 4,
            Error::Config { .. } | Error::InvalidArgument { .. } => 2,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Data(_) => 3,
            Error::ParamFile(_) | Error::ConfigMismatch { .. } => 3,
            Error::Shape { .. } => 1,
        };
        CliError { code, message: e.to_string() }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::internal)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn input_hashes(source: &DataSource) -> Result<Vec<InputFile>> {
    match source {
        DataSource::Csv { path } => Ok(vec![hash_file(path)?]),
        DataSource::Synth { .. } => Ok(Vec::new()),
    }
}

fn source_from_args(args: &SourceArgs) -> Result<DataSource> {
    match (&args.input, args.synth) {
        (Some(path), None) => Ok(DataSource::Csv { path: path.clone() }),
        (None, Some(kind)) => Ok(DataSource::synth(kind, args.length, args.data_seed)),
        _ => Err(CliError::usage("give exactly one of --input or --synth")),
    }
}

fn load_source(source: &DataSource) -> Result<TimeSeries> {
    source.load().map_err(|e| match e {
        Error::InvalidArgument { .. } | Error::Config { .. } => CliError::usage(e.to_string()),
        other => CliError::io(other.to_string()),
    })
}

/// Settings echoed into the `simulate` manifest.
#[derive(Serialize, Deserialize)]
struct SimulateConfig {
    source: DataSource,
    ratio: f64,
    seed: u64,
    mask_seed: u64,
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    if !(0.0..1.0).contains(&args.ratio) {
        return Err(CliError::usage(format!("--ratio {} is not in [0, 1)", args.ratio)));
    }
    let source = source_from_args(&args.source)?;
    let cfg = SimulateConfig {
        source,
        ratio: args.ratio,
        seed: args.seed,
        mask_seed: mask_seed(args.seed, args.ratio),
    };
    create_dir(&args.out)?;
    RunManifest::new("simulate", args.seed, &cfg, input_hashes(&cfg.source)?, &args.out)?
        .write(&args.out)?;

    let clean = load_source(&cfg.source)?;
    let mask = generate_mask(clean.len(), cfg.ratio, cfg.mask_seed)?;
    let corrupted = apply_zoh(&clean, &mask)?;
    write_csv(&clean, args.out.join("clean.csv"))?;
    write_csv(&corrupted.observed, args.out.join("corrupted.csv"))?;
    let mut buf = Vec::new();
    mask.write_csv(&mut buf)?;
    write_bytes(&args.out.join("mask.csv"), &buf)?;
    let stats = staleness_stats(&mask);
    write_json(&args.out.join("stats.json"), &stats)?;
    eprintln!(
        "{} rows, stagnation fraction {:.4} (target {}), mask {}",
        clean.len(),
        stats.stagnation_fraction,
        cfg.ratio,
        &mask.hash()[..12]
    );
    Ok(())
}

/// Config of a single training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub model: relamix::model::ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Stagnation ratio applied to the inputs.
    pub delay_ratio: f64,
    /// Also report metrics in the original data units.
    pub raw_metrics: bool,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            model: Default::default(),
            train: Default::default(),
            data: Default::default(),
            delay_ratio: 0.25,
            raw_metrics: false,
        }
    }
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let cfg: TrainRunConfig = if let Some(path) = &args.manifest {
        let m = RunManifest::load(path, "train")?;
        m.verify_inputs()?;
        serde_json::from_value(m.config).map_err(|e| CliError::usage(e.to_string()))?
    } else {
        let mut cfg: TrainRunConfig = match &args.config {
            Some(p) => read_config(p)?,
            None => TrainRunConfig::default(),
        };
        if let Some(path) = &args.data {
            cfg.data.source = DataSource::Csv { path: path.clone() };
        } else if let Some(kind) = args.synth {
            cfg.data.source = DataSource::synth(kind, args.length, 0);
        }
        cfg
    };
    cfg.model.validate()?;
    cfg.train.validate()?;
    if !(0.0..1.0).contains(&cfg.delay_ratio) {
        return Err(CliError::usage(format!("delay_ratio {} is not in [0, 1)", cfg.delay_ratio)));
    }

    create_dir(&args.out)?;
    let seed = cfg.train.seed;
    RunManifest::new("train", seed, &cfg, input_hashes(&cfg.data.source)?, &args.out)?
        .write(&args.out)?;

    let clean = load_source(&cfg.data.source)?;
    if clean.dim() != cfg.model.input_dim {
        return Err(CliError::usage(format!(
            "data has {} features but model.input_dim is {}",
            clean.dim(),
            cfg.model.input_dim
        )));
    }
    let prepared = prepare_data(
        &clean,
        cfg.delay_ratio,
        mask_seed(seed, cfg.delay_ratio),
        cfg.data.split,
        cfg.model.window_len + cfg.model.horizon,
    )?;
    let windows = prepared.windows(window_spec(&cfg.model))?;
    let names: Vec<String> = clean.feature_names()[..cfg.model.output_dim].to_vec();
    let kind = ModelKind::Relamix(cfg.model.ablation);
    eprintln!(
        "training {} on {} windows ({} validation)",
        kind.label(),
        windows.train.len(),
        windows.val.len()
    );
    let result = run_cell(
        CellSpec {
            kind,
            model: &cfg.model,
            train: &cfg.train,
            delay_ratio: cfg.delay_ratio,
            seed,
            mask_hash: &prepared.mask.hash(),
            feature_names: &names,
            raw_scaler: cfg.raw_metrics.then_some(&prepared.scaler),
        },
        &windows.train,
        &windows.val,
        &windows.val,
    )?;
    if let Forecaster::Relamix { config, params } = &result.model {
        save_parameters(params, config, args.out.join("params.bin"))?;
    }
    let mut buf = Vec::new();
    result.history.write_csv(&mut buf)?;
    write_bytes(&args.out.join("history.csv"), &buf)?;
    write_json(&args.out.join("report.json"), &result.report)?;
    eprintln!(
        "{} epochs (best {}), validation mse {:.6}, init seed {}",
        result.report.epochs,
        result.report.best_epoch,
        result.report.mse,
        cell_seed(seed, cfg.delay_ratio, cfg.model.horizon, kind)
    );
    Ok(())
}

fn cell_stem(r: &EvalReport) -> String {
    let label = r.kind().map(|k| k.label()).unwrap_or_else(|| r.model.clone());
    format!("{}_r{}_k{}_s{}", label.replace('/', "-"), r.delay_ratio, r.k, r.seed)
}

fn use_color() -> bool {
    std::io::stdout().is_terminal() && std::env::var_os("NO_COLOR").is_none_or(|v| v.is_empty())
}

pub fn grid(args: &GridArgs) -> Result<()> {
    let mut cfg: GridConfig = if let Some(path) = &args.manifest {
        let m = RunManifest::load(path, "grid")?;
        m.verify_inputs()?;
        serde_json::from_value(m.config).map_err(|e| CliError::usage(e.to_string()))?
    } else {
        match &args.config {
            Some(p) => read_config(p)?,
            None => GridConfig::default(),
        }
    };
    if let Some(models) = &args.models {
        cfg.models = vec![models.clone()];
    }
    cfg.validate()?;
    let total = cfg.cell_count()?;

    create_dir(&args.out)?;
    let master = cfg.seeds[0];
    RunManifest::new("grid", master, &cfg, input_hashes(&cfg.data.source)?, &args.out)?
        .write(&args.out)?;
    let cells_dir = args.out.join("cells");
    create_dir(&cells_dir)?;

    let clean = load_source(&cfg.data.source)?;
    let mut done = 0;
    let mut write_error = None;
    let outcome = run_grid(&cfg, &clean, |cell| {
        done += 1;
        match cell {
            CellOutcome::Done(r) => {
                let stem = cell_stem(&r.report);
                eprintln!(
                    "[{done}/{total}] {stem}: mse {:.5} ({} epochs, {:.1}s)",
                    r.report.mse, r.report.epochs, r.report.wall_time
                );
                let mut buf = Vec::new();
                let res = write_json(&cells_dir.join(format!("{stem}.json")), &r.report)
                    .and_then(|_| r.history.write_csv(&mut buf).map_err(CliError::from))
                    .and_then(|_| write_bytes(&cells_dir.join(format!("{stem}.history.csv")), &buf));
                if let Err(e) = res {
                    write_error.get_or_insert(e);
                }
            }
            CellOutcome::Failed(f) => {
                eprintln!(
                    "[{done}/{total}] {} r={} k={} seed={} FAILED: {}",
                    f.model, f.delay_ratio, f.k, f.seed, f.error
                );
            }
        }
    })?;
    if let Some(e) = write_error {
        return Err(e);
    }

    write_json(&args.out.join("reports.json"), &outcome.reports)?;
    let mut buf = Vec::new();
    write_reports_csv(&outcome.reports, &mut buf)?;
    write_bytes(&args.out.join("reports.csv"), &buf)?;
    let table = render_table(&outcome.reports, false)?;
    write_bytes(&args.out.join("table.txt"), table.as_bytes())?;
    print!("{}", render_table(&outcome.reports, use_color())?);

    if !outcome.failures.is_empty() {
        write_json(&args.out.join("failures.json"), &outcome.failures)?;
        let numeric = outcome.failures.iter().any(|f| f.numeric);
        return Err(CliError {
            code: if numeric { 4 } else { 1 },
            message: format!("{} of {total} cells failed (see failures.json)", outcome.failures.len()),
        });
    }
    Ok(())
}

/// Collects every report found in the `*.json` files directly inside `dir`.
/// Files holding anything else (manifests, failure lists) are skipped.
pub fn collect_reports(dir: &Path) -> Result<Vec<EvalReport>> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(e.to_string()))?.path();
        if path.extension().is_some_and(|e| e == "json") && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    let mut reports: Vec<EvalReport> = Vec::new();
    for path in paths {
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
        let found = if let Ok(list) = serde_json::from_str::<Vec<EvalReport>>(&text) {
            list
        } else if let Ok(one) = serde_json::from_str::<EvalReport>(&text) {
            vec![one]
        } else {
            continue;
        };
        for r in found {
            if !reports.contains(&r) {
                reports.push(r);
            }
        }
    }
    sort_reports(&mut reports);
    Ok(reports)
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let reports = collect_reports(&args.input)?;
    let mut out = std::io::stdout().lock();
    let res = match args.format {
        Format::Json => {
            let text = serde_json::to_string_pretty(&reports).map_err(CliError::internal)?;
            writeln!(out, "{text}")
        }
        Format::Csv => {
            write_reports_csv(&reports, &mut out)?;
            Ok(())
        }
        Format::Table => write!(out, "{}", render_table(&reports, use_color())?),
    };
    res.map_err(|e| CliError::io(e.to_string()))
}
