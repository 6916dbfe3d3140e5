use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Architecture variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Bottleneck projection, mixing blocks and multi-level skips.
    Full,
    /// Latent width widened to `model_dim` (no squeeze).
    NoCompression,
    /// Residual adds and cumulative skips removed.
    NoResidual,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Full, Ablation::NoCompression, Ablation::NoResidual];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoCompression => "no_compression",
            Ablation::NoResidual => "no_residual",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
}

/// Architecture hyperparameters. Defaults: `L = 20`, `k = 1`, five input and
/// output features, `d_b = 32`, `D_model = 64`, two blocks, `α = 0.1`,
/// dropout 0.1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(alias = "L")]
    pub window_len: usize,
    #[serde(alias = "k")]
    pub horizon: usize,
    #[serde(alias = "D_in")]
    pub input_dim: usize,
    #[serde(alias = "D_out")]
    pub output_dim: usize,
    #[serde(alias = "d_b")]
    pub bottleneck_dim: usize,
    #[serde(alias = "D_model")]
    pub model_dim: usize,
    pub n_blocks: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub activation: Activation,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            window_len: 20,
            horizon: 1,
            input_dim: 5,
            output_dim: 5,
            bottleneck_dim: 32,
            model_dim: 64,
            n_blocks: 2,
            alpha: 0.1,
            dropout: 0.1,
            activation: Activation::Gelu,
            ablation: Ablation::Full,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window_len", self.window_len),
            ("horizon", self.horizon),
            ("input_dim", self.input_dim),
            ("output_dim", self.output_dim),
            ("bottleneck_dim", self.bottleneck_dim),
            ("model_dim", self.model_dim),
            ("n_blocks", self.n_blocks),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.bottleneck_dim > self.model_dim {
            return Err(Error::config(
                "bottleneck_dim",
                format!(
                    "bottleneck width {} exceeds model_dim {}",
                    self.bottleneck_dim, self.model_dim
                ),
            ));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha", format!("must be finite and ≥ 0, got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", format!("must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    /// Width of the latent representation carried between blocks.
    pub fn latent_dim(&self) -> usize {
        match self.ablation {
            Ablation::NoCompression => self.model_dim,
            _ => self.bottleneck_dim,
        }
    }

    pub fn has_residual(&self) -> bool {
        self.ablation != Ablation::NoResidual
    }

    /// Flattened prediction width `k · D_out`.
    pub fn prediction_len(&self) -> usize {
        self.horizon * self.output_dim
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Closed-form parameter total for `cfg`.
pub fn count_parameters(cfg: &ModelConfig) -> usize {
    let w = cfg.latent_dim();
    let l = cfg.window_len;
    let dm = cfg.model_dim;
    let out = cfg.prediction_len();
    let input = cfg.input_dim * w + w;
    let per_block = 2 * 2 * w + l * l + l + w * dm + dm + dm * w + w;
    let skips = if cfg.has_residual() {
        cfg.n_blocks * (w * w + w)
    } else {
        0
    };
    let head = w * out + out;
    input + cfg.n_blocks * per_block + skips + head
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_validates() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn wide_bottleneck_names_the_field() {
        let cfg = ModelConfig {
            bottleneck_dim: 65,
            ..ModelConfig::default()
        };
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "bottleneck_dim"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_aliases_parse() {
        let cfg: ModelConfig = serde_json::from_str(r#"{"L": 8, "k": 5, "d_b": 16, "D_model": 32}"#).unwrap();
        assert_eq!((cfg.window_len, cfg.horizon, cfg.bottleneck_dim, cfg.model_dim), (8, 5, 16, 32));
        assert_eq!(cfg.alpha, 0.1);
    }

    #[test]
    fn horizon_increment_is_head_row_times_outputs() {
        let mut cfg = ModelConfig::default();
        let mut counts = Vec::new();
        for k in [1, 5, 7, 10] {
            cfg.horizon = k;
            counts.push(count_parameters(&cfg));
        }
        let diffs: Vec<usize> = counts.windows(2).map(|w| w[1] - w[0]).collect();
        assert_eq!(diffs, vec![660, 330, 495]);
        assert_eq!(counts[0], 11_949);
    }

    #[test]
    fn no_compression_is_larger() {
        for ablation in [Ablation::NoCompression] {
            let cfg = ModelConfig {
                ablation,
                ..ModelConfig::default()
            };
            assert!(count_parameters(&cfg) > count_parameters(&ModelConfig::default()));
        }
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = ModelConfig::default();
        let b = ModelConfig {
            horizon: 2,
            ..ModelConfig::default()
        };
        assert_eq!(a.hash(), ModelConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
