use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::AdamConfig;
use crate::blg::{BlgTrainConfig, BoundaryConfig, ClassifierSpec};
use crate::dataset::AugmentConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::network::NetworkConfig;
use crate::raster::Normalization;

/// Boundary-label generation settings: classifier, its training schedule
/// and the trimap/window thresholds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlgConfig {
    pub classifier: ClassifierSpec,
    pub train: BlgTrainConfig,
    pub boundary: BoundaryConfig,
}


/// Everything a saliency training run depends on. Loaded from TOML; every
/// field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub input_size: usize,
    pub batch_size: usize,
    pub epochs: u64,
    /// Stop after this many optimiser steps even if epochs remain.
    pub max_steps: Option<u64>,
    /// Save a checkpoint every this many epochs (0 = only the last).
    pub checkpoint_every: u64,
    /// Linear learning-rate warm-up length in steps; 0 disables it.
    pub warmup_steps: u64,
    /// Global gradient-norm clip; absent disables it.
    pub grad_clip: Option<f64>,
    pub bn_momentum: f64,
    pub optimizer: AdamConfig,
    pub augment: AugmentConfig,
    pub normalization: Normalization,
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub blg: BlgConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            input_size: 352,
            batch_size: 4,
            epochs: 80,
            max_steps: None,
            checkpoint_every: 10,
            warmup_steps: 0,
            grad_clip: None,
            bn_momentum: 0.1,
            optimizer: AdamConfig::default(),
            augment: AugmentConfig::default(),
            normalization: Normalization::default(),
            network: NetworkConfig::default(),
            loss: LossConfig::default(),
            blg: BlgConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Parse {
            location: e.span().map_or_else(|| "config".into(), |s| format!("config bytes {}..{}", s.start, s.end)),
            reason: e.message().to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parse { location, reason } => Error::Parse {
                location: format!("{}: {location}", path.display()),
                reason,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(16) {
            return Err(Error::validation(format!(
                "input_size must be a positive multiple of 16, got {}",
                self.input_size
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be positive"));
        }
        let o = &self.optimizer;
        if !(o.lr >= 0.0) || !(o.eps > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::validation("optimizer settings out of range"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::validation("bn_momentum must lie in [0, 1]"));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::validation("grad_clip must be positive"));
        }
        if self.augment.size != self.input_size {
            return Err(Error::validation(format!(
                "augment.size ({}) must equal input_size ({})",
                self.augment.size, self.input_size
            )));
        }
        self.augment.validate()?;
        self.network.validate()?;
        self.blg.boundary.validate()?;
        self.blg.classifier.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// True when a run under `self` can continue one written under `other`:
    /// everything except run length and checkpoint cadence must agree.
    pub fn resumes(&self, other: &TrainConfig) -> bool {
        let strip = |c: &TrainConfig| TrainConfig {
            epochs: 0,
            max_steps: None,
            checkpoint_every: 0,
            ..c.clone()
        };
        strip(self) == strip(other)
    }

    /// A small configuration for CPU demos and tests.
    pub fn demo(input_size: usize) -> Self {
        TrainConfig {
            input_size,
            batch_size: 2,
            epochs: 4,
            checkpoint_every: 0,
            optimizer: AdamConfig {
                lr: 5e-3,
                ..AdamConfig::default()
            },
            augment: AugmentConfig::none(input_size),
            network: NetworkConfig::slim(),
            blg: BlgConfig {
                classifier: ClassifierSpec::tiny(2, input_size),
                train: BlgTrainConfig {
                    steps: 60,
                    batch_size: 4,
                    optimizer: AdamConfig {
                        lr: 3e-3,
                        ..AdamConfig::default()
                    },
                    ..BlgTrainConfig::default()
                },
                boundary: BoundaryConfig::default(),
            },
            ..TrainConfig::default()
        }
    }
}
