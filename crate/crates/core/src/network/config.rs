use std::fmt;

use serde::{Deserialize, Serialize};

use super::canny::CannyConfig;
use crate::error::{Error, Result};

/// How the lateral features `F_1`, `F_2` are processed before boundary fusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JauMode {
    /// Channel and spatial attention.
    Jau,
    /// Channel attention only.
    Ca,
    /// Plain conv block, no attention.
    Sc,
    /// No boundary branch at all.
    Off,
}

impl fmt::Display for JauMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JauMode::Jau => "jau",
            JauMode::Ca => "ca",
            JauMode::Sc => "sc",
            JauMode::Off => "off",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub das: bool,
    pub jau_mode: JauMode,
    pub eau: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation::FULL
    }
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        das: true,
        jau_mode: JauMode::Jau,
        eau: true,
    };

    /// The six configurations of the component study, from baseline to full.
    pub fn lattice() -> [(&'static str, Ablation); 6] {
        let row = |das, jau_mode, eau| Ablation { das, jau_mode, eau };
        [
            ("BS", row(false, JauMode::Off, false)),
            ("BS+DAS", row(true, JauMode::Off, false)),
            ("BS+DAS+SC", row(true, JauMode::Sc, false)),
            ("BS+DAS+CA", row(true, JauMode::Ca, false)),
            ("BS+DAS+JAU", row(true, JauMode::Jau, false)),
            ("BS+DAS+JAU+EAU", row(true, JauMode::Jau, true)),
        ]
    }

    pub fn has_boundary(&self) -> bool {
        self.jau_mode != JauMode::Off
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Output channels of the five encoder stages.
    pub encoder_widths: [usize; 5],
    /// 3x3 conv layers per encoder stage.
    pub encoder_depths: [usize; 5],
    /// Channel width of the attention, edge and aggregation blocks.
    pub width: usize,
    /// Filters in each directional edge branch.
    pub edge_filters: usize,
    pub decoder_widths: [usize; 4],
    pub cab_reduction: usize,
    pub canny: CannyConfig,
    pub ablation: Ablation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            encoder_widths: [64, 128, 256, 512, 512],
            encoder_depths: [2, 2, 3, 3, 3],
            width: 64,
            edge_filters: 16,
            decoder_widths: [256, 128, 64, 32],
            cab_reduction: 16,
            canny: CannyConfig::default(),
            ablation: Ablation::FULL,
        }
    }
}

impl NetworkConfig {
    /// A narrow variant for tests and CPU demos; same topology.
    pub fn tiny() -> Self {
        NetworkConfig {
            encoder_widths: [4, 4, 6, 6, 6],
            encoder_depths: [1, 1, 1, 1, 1],
            width: 4,
            edge_filters: 2,
            decoder_widths: [6, 4, 4, 4],
            ..NetworkConfig::default()
        }
    }

    /// A small but trainable variant.
    pub fn slim() -> Self {
        NetworkConfig {
            encoder_widths: [8, 16, 24, 32, 32],
            encoder_depths: [1, 1, 2, 2, 2],
            width: 8,
            edge_filters: 4,
            decoder_widths: [24, 16, 12, 8],
            ..NetworkConfig::default()
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let zero = self.encoder_widths.contains(&0)
            || self.encoder_depths.contains(&0)
            || self.decoder_widths.contains(&0)
            || self.width == 0
            || self.edge_filters == 0
            || self.cab_reduction == 0;
        if zero {
            return Err(Error::validation("network widths, depths and reduction must be positive"));
        }
        if self.ablation.eau && !self.ablation.has_boundary() {
            return Err(Error::validation("the edge auxiliary unit requires a boundary branch (jau_mode != off)"));
        }
        self.canny.validate()
    }
}
