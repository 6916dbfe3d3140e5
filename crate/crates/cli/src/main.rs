//! `relamix`: simulate feed staleness, train, run ablation grids and
//! render reports.
//!
//! Exit codes: 0 success, 1 failed grid cells, 2 usage or config errors,
//! 3 I/O or input-data errors, 4 non-finite training loss.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use relamix::data::SynthKind;

#[derive(Parser)]
#[command(name = "relamix", version, about = "Delay-robust forecasting under zero-order-hold staleness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corrupt a series with random stagnation and write the result.
    Simulate(SimulateArgs),
    /// Train one model and report validation metrics.
    Train(TrainArgs),
    /// Run the delay-ratio x horizon x model grid.
    Grid(GridArgs),
    /// Merge report files from a directory.
    Report(ReportArgs),
}

/// Input series: a CSV file or a synthetic generator.
#[derive(Args, Debug, Clone)]
pub struct SourceArgs {
    /// OHLCV CSV with a header row.
    #[arg(long, value_name = "CSV", conflicts_with = "synth")]
    pub input: Option<PathBuf>,
    /// Synthetic series kind: sine_mixture or gbm_ohlcv.
    #[arg(long, value_name = "KIND")]
    pub synth: Option<SynthKind>,
    /// Synthetic series length (defaults to the kind's benchmark length).
    #[arg(long, requires = "synth")]
    pub length: Option<usize>,
    /// Seed of the synthetic generator.
    #[arg(long, default_value_t = 0, requires = "synth")]
    pub data_seed: u64,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Target fraction of stagnant steps, in [0, 1).
    #[arg(long)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// JSON run config; omitted fields take their defaults.
    #[arg(long, conflicts_with = "manifest")]
    pub config: Option<PathBuf>,
    /// Re-run from a manifest written by an earlier `train`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// OHLCV CSV overriding the configured data source.
    #[arg(long, value_name = "CSV", conflicts_with_all = ["synth", "manifest"])]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "KIND", conflicts_with = "manifest")]
    pub synth: Option<SynthKind>,
    #[arg(long, requires = "synth")]
    pub length: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GridArgs {
    /// JSON grid config; omitted fields take their defaults.
    #[arg(long, conflicts_with = "manifest")]
    pub config: Option<PathBuf>,
    /// Re-run from a manifest written by an earlier `grid`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Comma-separated model selection, e.g. `relamix`, `full,linear`, `all`.
    #[arg(long)]
    pub models: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Table,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Directory holding report JSON files.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Grid(a) => commands::grid(&a),
        Command::Report(a) => commands::report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
