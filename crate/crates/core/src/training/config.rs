//! Training hyperparameters, read from a flat TOML file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;

/// Which feature extractors feed the feature similarity term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatExtractor {
    /// Term disabled.
    #[default]
    None,
    Identity,
    /// Fixed random conv stacks for appearance and structure.
    Toy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch: usize,
    pub steps: u64,
    pub lambda_gp: f64,
    pub w_rec: f64,
    pub w_sparsity: f64,
    pub w_gen: f64,
    pub w_feat: f64,
    /// Largest forecast horizon sampled in stage 1.
    pub k_max: usize,
    /// Refiner window length.
    pub clip_k: usize,
    pub seed: u64,
    /// Critic updates per generator update.
    pub ratio: usize,
    /// Dense decoder connections in G_M.
    pub dense: bool,
    pub feat_extractor: FeatExtractor,
    /// Multiplies every network channel width (rounded, at least 1).
    pub width_scale: f64,
    /// Frames observed by the pose forecaster.
    pub observed: usize,
    /// Steps predicted by the pose forecaster.
    pub predict: usize,
    pub lstm_hidden: i64,
    pub lstm_layers: i64,
    /// Progress is logged every `log_every` steps (and at the last step).
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.0,
            beta2: 0.9,
            batch: 16,
            steps: 2000,
            lambda_gp: 10.0,
            w_rec: 1.0,
            w_sparsity: 1.0,
            w_gen: 1.0,
            w_feat: 1.0,
            k_max: 32,
            clip_k: 16,
            seed: 0,
            ratio: 1,
            dense: true,
            feat_extractor: FeatExtractor::None,
            width_scale: 1.0,
            observed: 10,
            predict: 32,
            lstm_hidden: 128,
            lstm_layers: 2,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let positive = [
            ("lr", self.lr),
            ("lambda_gp", self.lambda_gp),
            ("width_scale", self.width_scale),
        ];
        for (k, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{k} must be positive, got {v}"));
            }
        }
        for (k, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{k} must lie in [0, 1), got {v}"));
            }
        }
        for (k, v) in [
            ("w_rec", self.w_rec),
            ("w_sparsity", self.w_sparsity),
            ("w_gen", self.w_gen),
            ("w_feat", self.w_feat),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{k} must be non-negative, got {v}"));
            }
        }
        let counts = [
            ("batch", self.batch),
            ("k_max", self.k_max),
            ("clip_k", self.clip_k),
            ("ratio", self.ratio),
            ("observed", self.observed),
            ("predict", self.predict),
            ("log_every", self.log_every as usize),
        ];
        for (k, v) in counts {
            if v == 0 {
                return bad(format!("{k} must be at least 1"));
            }
        }
        if self.clip_k % 4 != 0 {
            return bad(format!("clip_k must be a multiple of 4, got {}", self.clip_k));
        }
        if self.lstm_hidden < 1 || self.lstm_layers < 1 {
            return bad("lstm_hidden and lstm_layers must be at least 1".into());
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            rec: self.w_rec,
            sparsity: self.w_sparsity,
            gen: self.w_gen,
            feat: if self.feat_extractor == FeatExtractor::None { 0.0 } else { self.w_feat },
        }
    }

    /// Scales a nominal channel width.
    pub fn width(&self, nominal: i64) -> i64 {
        ((nominal as f64 * self.width_scale).round() as i64).max(1)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_documented_settings() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.beta1, c.beta2, c.lambda_gp), (1e-4, 0.0, 0.9, 10.0));
        assert_eq!((c.k_max, c.clip_k, c.observed, c.predict), (32, 16, 10, 32));
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = TrainConfig {
            batch: 4,
            feat_extractor: FeatExtractor::Toy,
            ..Default::default()
        };
        assert_eq!(TrainConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        let p = TrainConfig::from_toml_str("steps = 7\nw_gen = 0.1\n").unwrap();
        assert_eq!((p.steps, p.w_gen, p.batch), (7, 0.1, 16));
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in ["lr = -1.0", "batch = 0", "clip_k = 6", "beta1 = 1.0", "unknown = 3"] {
            assert!(matches!(TrainConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }
}
