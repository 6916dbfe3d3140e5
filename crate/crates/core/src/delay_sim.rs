//! Zero-order-hold staleness simulation.
//!
//! A stagnation mask marks, per timestep, whether a fresh observation arrived
//! (`1`) or the previous observed row is held (`0`). The first step is always
//! an update, so the hold is well defined from the start of the series.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::TimeSeries;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};

const MASK_MAGIC: &[u8; 8] = b"RLXMASK1";

#[derive(Debug, Clone, PartialEq)]
pub struct StagnationMask {
    states: Vec<u8>,
    target_ratio: f64,
    seed: u64,
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::invalid(
            "delay_ratio",
            format!("must lie in [0, 1), got {ratio}"),
        ));
    }
    Ok(())
}

impl StagnationMask {
    /// Wraps explicit states. Fails unless states are binary and start with 1.
    pub fn from_states(states: Vec<u8>, target_ratio: f64, seed: u64) -> Result<Self> {
        check_ratio(target_ratio)?;
        if let Some(i) = states.iter().position(|&s| s > 1) {
            return Err(Error::invalid("states", format!("entry {i} is not 0/1")));
        }
        if states.first() == Some(&0) {
            return Err(Error::invalid("states", "the first step must be an update (1)"));
        }
        Ok(StagnationMask {
            states,
            target_ratio,
            seed,
        })
    }

    pub fn states(&self) -> &[u8] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn target_ratio(&self) -> f64 {
        self.target_ratio
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stagnation_count(&self) -> usize {
        self.states.iter().filter(|&&s| s == 0).count()
    }

    /// Hex SHA-256 of the state sequence; identifies a mask across reports.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(&self.states))
    }

    /// Compact binary form: magic, length, ratio, seed (little-endian), then
    /// states packed 8 per byte, least significant bit first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.states.len() / 8 + 1);
        out.extend_from_slice(MASK_MAGIC);
        out.extend_from_slice(&(self.states.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.target_ratio.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for chunk in self.states.chunks(8) {
            let mut byte = 0u8;
            for (i, &s) in chunk.iter().enumerate() {
                byte |= s << i;
            }
            out.push(byte);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |why: &str| Error::Data(format!("corrupt mask file: {why}"));
        if bytes.len() < 32 || &bytes[..8] != MASK_MAGIC {
            return Err(corrupt("bad header"));
        }
        let word = |i: usize| <[u8; 8]>::try_from(&bytes[i..i + 8]).expect("8-byte slice");
        let len = u64::from_le_bytes(word(8)) as usize;
        let ratio = f64::from_le_bytes(word(16));
        let seed = u64::from_le_bytes(word(24));
        let body = &bytes[32..];
        if body.len() != len.div_ceil(8) {
            return Err(corrupt("length does not match payload"));
        }
        let states = (0..len).map(|i| (body[i / 8] >> (i % 8)) & 1).collect();
        StagnationMask::from_states(states, ratio, seed)
    }

    /// Writes `t,s_t` rows (t starting at 1).
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = BufWriter::new(out);
        writeln!(w, "t,s")?;
        for (i, s) in self.states.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, s)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(input: impl Read, target_ratio: f64, seed: u64) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let mut states = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let t: usize = rec
                .get(0)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Data(format!("mask line {}: bad t", i + 2)))?;
            if t != i + 1 {
                return Err(Error::Data(format!("mask line {}: expected t = {}", i + 2, i + 1)));
            }
            let s: u8 = rec
                .get(1)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Data(format!("mask line {}: bad s", i + 2)))?;
            states.push(s);
        }
        StagnationMask::from_states(states, target_ratio, seed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        StagnationMask::from_bytes(&bytes)
    }
}

/// I.i.d. Bernoulli stagnation: `P(s_t = 0) = delay_ratio` for every step
/// after the first, which is forced to 1.
pub fn generate_mask(length: usize, delay_ratio: f64, seed: u64) -> Result<StagnationMask> {
    check_ratio(delay_ratio)?;
    if length == 0 {
        return Err(Error::invalid("length", "mask length must be at least 1"));
    }
    let mut rng = SeededRng::new(seed);
    let mut states = Vec::with_capacity(length);
    states.push(1);
    for _ in 1..length {
        states.push(u8::from(rng.uniform() >= delay_ratio));
    }
    Ok(StagnationMask {
        states,
        target_ratio: delay_ratio,
        seed,
    })
}

/// Bursty stagnation from a two-state Markov chain whose stationary
/// stagnation probability is `delay_ratio` and whose mean stagnation run
/// length is `mean_run` (≥ 1). Not used by the benchmark protocol.
pub fn generate_markov_mask(
    length: usize,
    delay_ratio: f64,
    mean_run: f64,
    seed: u64,
) -> Result<StagnationMask> {
    check_ratio(delay_ratio)?;
    if length == 0 {
        return Err(Error::invalid("length", "mask length must be at least 1"));
    }
    if !(mean_run >= 1.0) {
        return Err(Error::invalid("mean_run", format!("must be ≥ 1, got {mean_run}")));
    }
    // leave stagnation with prob q; enter it with prob p so that p/(p+q) = ratio
    let q = 1.0 / mean_run;
    let p = if delay_ratio > 0.0 {
        (q * delay_ratio / (1.0 - delay_ratio)).min(1.0)
    } else {
        0.0
    };
    let mut rng = SeededRng::new(seed);
    let mut states = Vec::with_capacity(length);
    states.push(1u8);
    for t in 1..length {
        let u = rng.uniform();
        let next = if states[t - 1] == 1 {
            u8::from(u >= p)
        } else {
            u8::from(u < q)
        };
        states.push(next);
    }
    Ok(StagnationMask {
        states,
        target_ratio: delay_ratio,
        seed,
    })
}

/// Clean series after zero-order-hold corruption.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedSeries {
    pub observed: TimeSeries,
    pub mask: StagnationMask,
    pub source_len: usize,
}

/// Holds the previous observed row wherever the mask is 0.
pub fn hold_rows(values: &Matrix, states: &[u8]) -> Result<Matrix> {
    if values.rows() != states.len() {
        return Err(Error::shape(
            "apply_zoh",
            format!("{} rows", values.rows()),
            format!("mask of {}", states.len()),
        ));
    }
    if states.first() == Some(&0) {
        return Err(Error::invalid("mask", "the first step must be an update (1)"));
    }
    let mut out = values.clone();
    for t in 1..states.len() {
        if states[t] == 0 {
            let prev = out.row(t - 1).to_vec();
            out.row_mut(t).copy_from_slice(&prev);
        }
    }
    Ok(out)
}

/// Applies the zero-order hold to every feature column at once.
pub fn apply_zoh(clean: &TimeSeries, mask: &StagnationMask) -> Result<CorruptedSeries> {
    let observed = hold_rows(clean.values(), mask.states())?;
    Ok(CorruptedSeries {
        observed: clean.with_values(observed),
        mask: mask.clone(),
        source_len: clean.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StalenessStats {
    pub length: usize,
    pub target_ratio: f64,
    pub stagnation_fraction: f64,
    /// Maximal zero-run length → number of such runs.
    pub run_histogram: BTreeMap<usize, usize>,
    pub max_run: usize,
    pub mean_run: f64,
}

pub fn staleness_stats(mask: &StagnationMask) -> StalenessStats {
    let mut hist = BTreeMap::new();
    let mut run = 0usize;
    let states = mask.states();
    for (i, &s) in states.iter().enumerate() {
        if s == 0 {
            run += 1;
        }
        if run > 0 && (s == 1 || i + 1 == states.len()) {
            *hist.entry(run).or_insert(0) += 1;
            run = 0;
        }
    }
    let zeros = mask.stagnation_count();
    let runs: usize = hist.values().sum();
    StalenessStats {
        length: states.len(),
        target_ratio: mask.target_ratio(),
        stagnation_fraction: if states.is_empty() {
            0.0
        } else {
            zeros as f64 / states.len() as f64
        },
        max_run: hist.keys().next_back().copied().unwrap_or(0),
        mean_run: if runs == 0 { 0.0 } else { zeros as f64 / runs as f64 },
        run_histogram: hist,
    }
}

impl CorruptedSeries {
    pub fn stats(&self) -> StalenessStats {
        staleness_stats(&self.mask)
    }
}
