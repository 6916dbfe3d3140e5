use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Column names every OHLCV input must carry.
pub const OHLCV_COLUMNS: [&str; 5] = ["open", "high", "low", "close", "volume"];

/// A timestamped multivariate series: `T` rows of `D` features.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    timestamps: Vec<i64>,
    values: Matrix,
    feature_names: Vec<String>,
}

impl TimeSeries {
    pub fn new(timestamps: Vec<i64>, values: Matrix, feature_names: Vec<String>) -> Result<Self> {
        if timestamps.len() != values.rows() {
            return Err(Error::shape(
                "TimeSeries::new",
                format!("{} timestamps", timestamps.len()),
                format!("{} rows", values.rows()),
            ));
        }
        if feature_names.len() != values.cols() {
            return Err(Error::shape(
                "TimeSeries::new",
                format!("{} feature names", feature_names.len()),
                format!("{} columns", values.cols()),
            ));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!(
                "timestamps must be strictly increasing: row {} has {} after {}",
                i + 1,
                timestamps[i + 1],
                timestamps[i]
            )));
        }
        if let Some(i) = values.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at row {}, column {}",
                i / values.cols().max(1),
                i % values.cols().max(1)
            )));
        }
        Ok(TimeSeries {
            timestamps,
            values,
            feature_names,
        })
    }

    /// Series with timestamps `start, start+1, …` and OHLCV feature names.
    pub fn ohlcv(start: i64, values: Matrix) -> Result<Self> {
        let t = values.rows() as i64;
        let names = OHLCV_COLUMNS.iter().map(|s| s.to_string()).collect();
        TimeSeries::new((start..start + t).collect(), values, names)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Same timestamps and names, different values. Only crate code may
    /// bypass validation, and only with already-validated data.
    pub(crate) fn with_values(&self, values: Matrix) -> TimeSeries {
        debug_assert_eq!(values.shape(), self.values.shape());
        TimeSeries {
            timestamps: self.timestamps.clone(),
            values,
            feature_names: self.feature_names.clone(),
        }
    }

    /// Rows `start..end` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> TimeSeries {
        TimeSeries {
            timestamps: self.timestamps[start..end].to_vec(),
            values: self.values.slice_rows(start, end),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Appends `other` after `self`; timestamps must keep increasing.
    pub fn concat(&self, other: &TimeSeries) -> Result<TimeSeries> {
        if self.feature_names != other.feature_names {
            return Err(Error::Data("cannot concatenate series with different features".into()));
        }
        let mut ts = self.timestamps.clone();
        ts.extend_from_slice(&other.timestamps);
        let values = Matrix::vstack(&[&self.values, &other.values])?;
        TimeSeries::new(ts, values, self.feature_names.clone())
    }
}

/// Reads an OHLCV CSV. The header must name `timestamp` and the five OHLCV
/// columns (in any order); other columns are ignored.
pub fn load_csv(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let mut text = String::new();
    File::open(path.as_ref())?.read_to_string(&mut text)?;
    parse_csv(text.as_bytes())
}

pub fn parse_csv(input: impl Read) -> Result<TimeSeries> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Data(format!("missing required column `{name}`")))
    };
    let ts_col = find("timestamp")?;
    let cols: Vec<usize> = OHLCV_COLUMNS.iter().map(|c| find(c)).collect::<Result<_>>()?;

    let mut timestamps = Vec::new();
    let mut data = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let record = record?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let ts: i64 = field(ts_col)
            .parse()
            .map_err(|e| Error::Data(format!("line {line}: bad timestamp `{}`: {e}", field(ts_col))))?;
        if let Some(&prev) = timestamps.last() {
            if ts <= prev {
                let kind = if ts == prev { "duplicate" } else { "decreasing" };
                return Err(Error::Data(format!(
                    "line {line}: {kind} timestamp {ts} (previous {prev})"
                )));
            }
        }
        timestamps.push(ts);
        for (&c, name) in cols.iter().zip(OHLCV_COLUMNS) {
            let v: f64 = field(c).parse().map_err(|e| {
                Error::Data(format!("line {line}: bad {name} value `{}`: {e}", field(c)))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!("line {line}: non-finite {name} value {v}")));
            }
            data.push(v);
        }
    }
    let values = Matrix::from_vec(timestamps.len(), OHLCV_COLUMNS.len(), data)?;
    let names = OHLCV_COLUMNS.iter().map(|s| s.to_string()).collect();
    TimeSeries::new(timestamps, values, names)
}

/// Writes `timestamp,<features...>` with shortest round-trip float formatting.
pub fn write_csv(series: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    let file = BufWriter::new(File::create(path.as_ref())?);
    write_csv_to(series, file)
}

pub fn write_csv_to(series: &TimeSeries, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["timestamp".to_string()];
    header.extend(series.feature_names.iter().cloned());
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for (t, &ts) in series.timestamps.iter().enumerate() {
        record.clear();
        record.push(ts.to_string());
        record.extend(series.values.row(t).iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
