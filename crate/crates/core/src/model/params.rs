//! Flat parameter storage with named slices, initialization and the binary
//! parameter file.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "RLXPARM1"
//! version      u32      1
//! config hash  32 bytes raw SHA-256 of the canonical config JSON
//! slot count   u32
//! per slot     u16 name length, UTF-8 name, u32 rows, u32 cols
//! value count  u64
//! values       f64 × value count, slots concatenated in declaration order
//! ```

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};

const PARAM_MAGIC: &[u8; 8] = b"RLXPARM1";
const PARAM_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    init: SlotInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SlotInit {
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearSlots {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormSlots {
    pub gamma: usize,
    pub beta: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSlots {
    pub time_norm: NormSlots,
    pub time_mix: LinearSlots,
    pub feature_norm: NormSlots,
    pub expand: LinearSlots,
    pub compress: LinearSlots,
}

/// Ordered slot table for one model configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    slots: Vec<Slot>,
    total: usize,
    pub input: LinearSlots,
    pub blocks: Vec<BlockSlots>,
    pub skips: Vec<LinearSlots>,
    pub head: LinearSlots,
}

struct LayoutBuilder {
    slots: Vec<Slot>,
    total: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, rows: usize, cols: usize, init: SlotInit) -> usize {
        self.slots.push(Slot {
            name,
            rows,
            cols,
            offset: self.total,
            init,
        });
        self.total += rows * cols;
        self.slots.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> LinearSlots {
        LinearSlots {
            weight: self.push(
                format!("{prefix}.weight"),
                fan_in,
                fan_out,
                SlotInit::Uniform { fan_in },
            ),
            bias: self.push(format!("{prefix}.bias"), 1, fan_out, SlotInit::Zeros),
        }
    }

    fn norm(&mut self, prefix: &str, width: usize) -> NormSlots {
        NormSlots {
            gamma: self.push(format!("{prefix}.gamma"), 1, width, SlotInit::Ones),
            beta: self.push(format!("{prefix}.beta"), 1, width, SlotInit::Zeros),
        }
    }
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.latent_dim();
        let mut b = LayoutBuilder {
            slots: Vec::new(),
            total: 0,
        };
        let input = b.linear("input", cfg.input_dim, w);
        let blocks = (0..cfg.n_blocks)
            .map(|i| BlockSlots {
                time_norm: b.norm(&format!("blocks.{i}.time_norm"), w),
                time_mix: b.linear(&format!("blocks.{i}.time_mix"), cfg.window_len, cfg.window_len),
                feature_norm: b.norm(&format!("blocks.{i}.feature_norm"), w),
                expand: b.linear(&format!("blocks.{i}.expand"), w, cfg.model_dim),
                compress: b.linear(&format!("blocks.{i}.compress"), cfg.model_dim, w),
            })
            .collect();
        let skips = if cfg.has_residual() {
            (0..cfg.n_blocks)
                .map(|j| b.linear(&format!("skips.{j}"), w, w))
                .collect()
        } else {
            Vec::new()
        };
        let head = b.linear("head", w, cfg.prediction_len());
        Ok(ParamLayout {
            slots: b.slots,
            total: b.total,
            input,
            blocks,
            skips,
            head,
        })
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn slot(&self, idx: usize) -> &Slot {
        &self.slots[idx]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == name)
    }
}

/// Every learnable value of a model (or a gradient of the same shape), stored
/// as one flat vector addressed through a shared [`ParamLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    layout: Arc<ParamLayout>,
    values: Vec<f64>,
}

impl ParameterSet {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let values = vec![0.0; layout.total()];
        ParameterSet { layout, values }
    }

    pub fn zeros_like(other: &ParameterSet) -> Self {
        ParameterSet::zeros(other.layout.clone())
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::shape(
                "ParameterSet::from_values",
                format!("layout of {}", layout.total()),
                format!("{} values", values.len()),
            ));
        }
        Ok(ParameterSet { layout, values })
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn slice(&self, slot: usize) -> &[f64] {
        &self.values[self.layout.slot(slot).range()]
    }

    pub fn slice_mut(&mut self, slot: usize) -> &mut [f64] {
        let r = self.layout.slot(slot).range();
        &mut self.values[r]
    }

    pub fn by_name(&self, name: &str) -> Option<&[f64]> {
        self.layout.find(name).map(|i| self.slice(i))
    }

    /// Copy of a slot as a matrix.
    pub fn matrix(&self, slot: usize) -> Matrix {
        let s = self.layout.slot(slot);
        Matrix::from_vec(s.rows, s.cols, self.slice(slot).to_vec()).expect("slot shape")
    }

    /// Adds `values` into a slot.
    pub fn accumulate(&mut self, slot: usize, values: &[f64]) {
        let dst = self.slice_mut(slot);
        assert_eq!(dst.len(), values.len(), "slot size mismatch");
        for (d, v) in dst.iter_mut().zip(values) {
            *d += v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Hex SHA-256 over the raw little-endian values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Weights ~ U(−1/√fan_in, 1/√fan_in), biases 0, LayerNorm γ = 1 and β = 0.
pub fn init_parameters(cfg: &ModelConfig, seed: u64) -> Result<ParameterSet> {
    let layout = Arc::new(ParamLayout::new(cfg)?);
    let mut params = ParameterSet::zeros(layout.clone());
    let root = SeededRng::new(seed);
    for (i, slot) in layout.slots().iter().enumerate() {
        let dst = params.slice_mut(i);
        match slot.init {
            SlotInit::Uniform { fan_in } => {
                // each slot draws from its own stream so layouts can grow
                // without reshuffling earlier slots
                let mut rng = root.split(i as u64);
                let bound = 1.0 / (fan_in as f64).sqrt();
                for v in dst {
                    *v = rng.uniform_range(-bound, bound);
                }
            }
            SlotInit::Zeros => dst.fill(0.0),
            SlotInit::Ones => dst.fill(1.0),
        }
    }
    Ok(params)
}

fn config_digest(cfg: &ModelConfig) -> [u8; 32] {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&json).into()
}

pub fn encode_parameters(params: &ParameterSet, cfg: &ModelConfig) -> Result<Vec<u8>> {
    let expected = ParamLayout::new(cfg)?;
    if *params.layout.as_ref() != expected {
        return Err(Error::ParamFile("parameter layout does not match the config".into()));
    }
    let mut out = Vec::with_capacity(64 + params.len() * 8);
    out.extend_from_slice(PARAM_MAGIC);
    out.extend_from_slice(&PARAM_VERSION.to_le_bytes());
    out.extend_from_slice(&config_digest(cfg));
    out.extend_from_slice(&(params.layout.slots().len() as u32).to_le_bytes());
    for s in params.layout.slots() {
        out.extend_from_slice(&(s.name.len() as u16).to_le_bytes());
        out.extend_from_slice(s.name.as_bytes());
        out.extend_from_slice(&(s.rows as u32).to_le_bytes());
        out.extend_from_slice(&(s.cols as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::ParamFile(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_parameters(bytes: &[u8], cfg: &ModelConfig) -> Result<ParameterSet> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != PARAM_MAGIC {
        return Err(Error::ParamFile("bad magic bytes".into()));
    }
    let version = c.u32()?;
    if version != PARAM_VERSION {
        return Err(Error::ParamFile(format!("unsupported version {version}")));
    }
    let digest = c.take(32)?;
    let expected = config_digest(cfg);
    if digest != expected {
        return Err(Error::ConfigMismatch {
            expected: hex::encode(expected),
            found: hex::encode(digest),
        });
    }
    let layout = ParamLayout::new(cfg)?;
    let n_slots = c.u32()? as usize;
    if n_slots != layout.slots().len() {
        return Err(Error::ParamFile(format!(
            "file has {n_slots} slots, config expects {}",
            layout.slots().len()
        )));
    }
    for s in layout.slots() {
        let len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::ParamFile("slot name is not UTF-8".into()))?;
        let (rows, cols) = (c.u32()? as usize, c.u32()? as usize);
        if name != s.name || rows != s.rows || cols != s.cols {
            return Err(Error::ParamFile(format!(
                "slot `{name}` {rows}x{cols} does not match expected `{}` {}x{}",
                s.name, s.rows, s.cols
            )));
        }
    }
    let count = c.u64()? as usize;
    if count != layout.total() {
        return Err(Error::ParamFile(format!(
            "file holds {count} values, config expects {}",
            layout.total()
        )));
    }
    let values = c
        .take(count * 8)?
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    if c.pos != bytes.len() {
        return Err(Error::ParamFile("trailing bytes after values".into()));
    }
    ParameterSet::from_values(Arc::new(layout), values)
}

pub fn save_parameters(params: &ParameterSet, cfg: &ModelConfig, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_parameters(params, cfg)?;
    File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn load_parameters(path: impl AsRef<Path>, cfg: &ModelConfig) -> Result<ParameterSet> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_parameters(&bytes, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{count_parameters, Ablation};
    use proptest::prelude::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::default();
        assert_eq!(init_parameters(&cfg, 3).unwrap(), init_parameters(&cfg, 3).unwrap());
        assert_ne!(init_parameters(&cfg, 3).unwrap(), init_parameters(&cfg, 4).unwrap());
    }

    #[test]
    fn norms_start_at_identity_and_weights_are_bounded() {
        let cfg = ModelConfig::default();
        let p = init_parameters(&cfg, 1).unwrap();
        for s in p.layout().slots() {
            let v = p.by_name(&s.name).unwrap();
            if s.name.ends_with("gamma") {
                assert!(v.iter().all(|&x| x == 1.0));
            } else if s.name.ends_with("beta") || s.name.ends_with("bias") {
                assert!(v.iter().all(|&x| x == 0.0));
            } else {
                let bound = 1.0 / (s.rows as f64).sqrt();
                assert!(v.iter().all(|&x| x.abs() <= bound));
                assert!(v.iter().any(|&x| x != 0.0));
            }
        }
    }

    #[test]
    fn default_count_matches_allocation() {
        let cfg = ModelConfig::default();
        assert_eq!(init_parameters(&cfg, 0).unwrap().len(), count_parameters(&cfg));
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let cfg = ModelConfig {
            horizon: 5,
            ..ModelConfig::default()
        };
        let p = init_parameters(&cfg, 12).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        save_parameters(&p, &cfg, &path).unwrap();
        let loaded = load_parameters(&path, &cfg).unwrap();
        assert_eq!(loaded, p);
        let path2 = dir.path().join("p2.bin");
        save_parameters(&loaded, &cfg, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn load_with_other_horizon_is_config_mismatch() {
        let cfg = ModelConfig::default();
        let bytes = encode_parameters(&init_parameters(&cfg, 1).unwrap(), &cfg).unwrap();
        let other = ModelConfig {
            horizon: 7,
            ..ModelConfig::default()
        };
        assert!(matches!(decode_parameters(&bytes, &other), Err(Error::ConfigMismatch { .. })));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let cfg = ModelConfig::default();
        let bytes = encode_parameters(&init_parameters(&cfg, 1).unwrap(), &cfg).unwrap();
        assert!(decode_parameters(&bytes[..bytes.len() - 3], &cfg).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_parameters(&bad, &cfg).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode_parameters(&long, &cfg).is_err());
    }

    proptest! {
        #[test]
        fn closed_form_count_matches_layout(
            l in 1usize..12, k in 1usize..6, din in 1usize..8, dout in 1usize..6,
            db in 1usize..12, extra in 0usize..12, n in 1usize..4, abl in 0usize..3,
        ) {
            let cfg = ModelConfig {
                window_len: l, horizon: k, input_dim: din, output_dim: dout,
                bottleneck_dim: db, model_dim: db + extra, n_blocks: n,
                ablation: Ablation::ALL[abl], ..ModelConfig::default()
            };
            prop_assert_eq!(ParamLayout::new(&cfg).unwrap().total(), count_parameters(&cfg));
            let next = ModelConfig { horizon: k + 1, ..cfg.clone() };
            prop_assert_eq!(count_parameters(&next) - count_parameters(&cfg), (cfg.latent_dim() + 1) * dout);
        }
    }
}
