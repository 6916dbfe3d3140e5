//! Synthetic OHLCV-shaped benchmark series.

use serde::{Deserialize, Serialize};

use super::series::TimeSeries;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};

/// First timestamp of every synthetic series.
pub const SYNTH_START_TIMESTAMP: i64 = 1_700_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    SineMixture,
    GbmOhlcv,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine_mixture" | "sine" => Ok(SynthKind::SineMixture),
            "gbm_ohlcv" | "gbm" => Ok(SynthKind::GbmOhlcv),
            other => Err(Error::invalid(
                "kind",
                format!("unknown synthetic kind `{other}` (expected sine_mixture or gbm_ohlcv)"),
            )),
        }
    }
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::SineMixture => "sine_mixture",
            SynthKind::GbmOhlcv => "gbm_ohlcv",
        }
    }

    /// Default benchmark length for this kind.
    pub fn default_length(self) -> usize {
        match self {
            SynthKind::SineMixture => 20_000,
            SynthKind::GbmOhlcv => 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SineParams {
    /// Integer periods, in steps, of the three components.
    pub periods: [u32; 3],
    pub amplitudes: [f64; 3],
    pub noise_std: f64,
}

impl Default for SineParams {
    fn default() -> Self {
        SineParams {
            periods: [24, 60, 100],
            amplitudes: [1.0, 0.6, 0.3],
            noise_std: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbmParams {
    pub initial_price: f64,
    /// Per-step log drift.
    pub drift: f64,
    /// Per-step log volatility at the mean volume level.
    pub volatility: f64,
    /// Brownian sub-steps per bar used for the intra-bar high/low.
    pub substeps: u32,
    /// Mean of log volume.
    pub log_volume_mean: f64,
    /// Stationary standard deviation of log volume.
    pub log_volume_std: f64,
    /// AR(1) persistence of log volume.
    pub log_volume_persistence: f64,
    /// Elasticity of per-step volatility to the log-volume deviation.
    pub volume_volatility_coupling: f64,
}

impl Default for GbmParams {
    fn default() -> Self {
        GbmParams {
            initial_price: 100.0,
            drift: 0.0,
            volatility: 1e-3,
            substeps: 4,
            log_volume_mean: 3.0,
            log_volume_std: 0.5,
            log_volume_persistence: 0.6,
            volume_volatility_coupling: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub sine: SineParams,
    pub gbm: GbmParams,
}

/// Generates a deterministic synthetic series with OHLCV feature names.
pub fn synth_series(
    kind: SynthKind,
    length: usize,
    seed: u64,
    params: &SynthParams,
) -> Result<TimeSeries> {
    if length == 0 {
        return Err(Error::invalid("length", "synthetic series needs at least one row"));
    }
    let values = match kind {
        SynthKind::SineMixture => sine_mixture(length, seed, &params.sine)?,
        SynthKind::GbmOhlcv => gbm_ohlcv(length, seed, &params.gbm)?,
    };
    TimeSeries::ohlcv(SYNTH_START_TIMESTAMP, values)
}

fn sine_mixture(length: usize, seed: u64, p: &SineParams) -> Result<Matrix> {
    if p.periods.contains(&0) {
        return Err(Error::invalid("periods", "sine periods must be positive"));
    }
    let features = 5;
    let mut rng = SeededRng::new(seed);
    // per-feature phase offsets and level shifts
    let phases: Vec<[f64; 3]> = (0..features)
        .map(|_| {
            [
                rng.uniform_range(0.0, std::f64::consts::TAU),
                rng.uniform_range(0.0, std::f64::consts::TAU),
                rng.uniform_range(0.0, std::f64::consts::TAU),
            ]
        })
        .collect();
    let levels: Vec<f64> = (0..features).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let mut noise = rng.split(1);
    let mut m = Matrix::zeros(length, features);
    for t in 0..length {
        for f in 0..features {
            let mut v = levels[f];
            for c in 0..3 {
                // reduce t modulo the period so the phase argument is exact
                let period = u64::from(p.periods[c]);
                let frac = (t as u64 % period) as f64 / period as f64;
                v += p.amplitudes[c] * (std::f64::consts::TAU * frac + phases[f][c]).sin();
            }
            if p.noise_std > 0.0 {
                v += p.noise_std * noise.normal();
            }
            m.set(t, f, v);
        }
    }
    Ok(m)
}

fn gbm_ohlcv(length: usize, seed: u64, p: &GbmParams) -> Result<Matrix> {
    if !(p.initial_price > 0.0) || p.substeps == 0 || !(p.volatility >= 0.0) {
        return Err(Error::invalid(
            "gbm",
            "initial_price must be positive, substeps ≥ 1, volatility ≥ 0",
        ));
    }
    if !(-1.0 < p.log_volume_persistence && p.log_volume_persistence < 1.0) {
        return Err(Error::invalid("log_volume_persistence", "must lie in (-1, 1)"));
    }
    let mut price_rng = SeededRng::new(seed);
    let mut volume_rng = price_rng.split(1);
    let phi = p.log_volume_persistence;
    let innovation = p.log_volume_std * (1.0 - phi * phi).sqrt();
    let sub = f64::from(p.substeps);

    let mut m = Matrix::zeros(length, 5);
    let mut log_close = p.initial_price.ln();
    let mut lv_dev = p.log_volume_std * volume_rng.normal();
    for t in 0..length {
        if t > 0 {
            lv_dev = phi * lv_dev + innovation * volume_rng.normal();
        }
        let sigma = p.volatility * (p.volume_volatility_coupling * lv_dev).exp();
        let step_sd = sigma / sub.sqrt();
        let step_drift = (p.drift - 0.5 * sigma * sigma) / sub;

        let open = log_close.exp();
        let (mut hi, mut lo) = (open, open);
        let mut lp = log_close;
        for _ in 0..p.substeps {
            lp += step_drift + step_sd * price_rng.normal();
            let px = lp.exp();
            hi = hi.max(px);
            lo = lo.min(px);
        }
        log_close = lp;
        let close = lp.exp();
        let volume = (p.log_volume_mean + lv_dev).exp();
        m.row_mut(t).copy_from_slice(&[open, hi, lo, close, volume]);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_sine_is_periodic_after_lcm() {
        let params = SynthParams {
            sine: SineParams {
                noise_std: 0.0,
                ..SineParams::default()
            },
            ..SynthParams::default()
        };
        // lcm(24, 60, 100) = 600
        let s = synth_series(SynthKind::SineMixture, 1_500, 3, &params).unwrap();
        for t in 0..900 {
            for (a, b) in s.values().row(t).iter().zip(s.values().row(t + 600)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        // and not periodic at a shorter lag
        let diff: f64 = (0..600)
            .map(|t| (s.values().get(t, 0) - s.values().get(t + 300, 0)).abs())
            .sum();
        assert!(diff > 1.0);
    }

    #[test]
    fn gbm_bars_are_consistent() {
        let s = synth_series(SynthKind::GbmOhlcv, 5_000, 11, &SynthParams::default()).unwrap();
        for t in 0..s.len() {
            let r = s.values().row(t);
            let (open, high, low, close, volume) = (r[0], r[1], r[2], r[3], r[4]);
            assert!(low <= open.min(close));
            assert!(open.max(close) <= high);
            assert!(volume > 0.0);
            if t > 0 {
                assert_eq!(open, s.values().get(t - 1, 3));
            }
        }
    }

    #[test]
    fn same_seed_same_series() {
        for kind in [SynthKind::SineMixture, SynthKind::GbmOhlcv] {
            let a = synth_series(kind, 500, 9, &SynthParams::default()).unwrap();
            let b = synth_series(kind, 500, 9, &SynthParams::default()).unwrap();
            let c = synth_series(kind, 500, 10, &SynthParams::default()).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn zero_length_rejected() {
        assert!(synth_series(SynthKind::GbmOhlcv, 0, 1, &SynthParams::default()).is_err());
    }
}
