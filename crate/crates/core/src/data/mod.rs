//! OHLCV ingestion, synthetic benchmarks, standardization, chronological
//! splitting and window extraction.

mod prep;
mod series;
mod synth;
mod windows;

pub use prep::{chronological_split, split_ranges, Standardizer, DEFAULT_SPLIT};
pub use series::{load_csv, parse_csv, write_csv, write_csv_to, TimeSeries, OHLCV_COLUMNS};
pub use synth::{
    synth_series, GbmParams, SineParams, SynthKind, SynthParams, SYNTH_START_TIMESTAMP,
};
pub use windows::{make_windows, WindowMode, WindowSample, WindowSpec};
