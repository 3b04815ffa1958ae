//! Architecture and ablation switches.

use serde::{Deserialize, Serialize};

use crate::attributes::Attribute;

use super::ModelError;

/// Backbone channel schedule. `Paper` is the published architecture;
/// `Tiny` is a reduced schedule for desk-scale runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelPreset {
    #[default]
    Paper,
    Tiny,
}

impl ChannelPreset {
    /// Output channels of the four conv blocks.
    pub fn channels(self) -> [usize; 4] {
        match self {
            ChannelPreset::Paper => [32, 64, 128, 256],
            ChannelPreset::Tiny => [8, 16, 32, 64],
        }
    }

    /// Length of the per-slice content vector (= last block width).
    pub fn content_dim(self) -> usize {
        self.channels()[3]
    }
}

fn default_true() -> bool {
    true
}

fn default_hidden() -> usize {
    128
}

fn default_lambda() -> f64 {
    0.1
}

fn all_attributes() -> Vec<Attribute> {
    Attribute::ALL.to_vec()
}

/// Model architecture, attention-module switches and loss weighting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_true")]
    pub enable_sam: bool,
    #[serde(default = "default_true")]
    pub enable_caam: bool,
    #[serde(default = "default_true")]
    pub enable_ascmm: bool,
    #[serde(default)]
    pub preset: ChannelPreset,
    /// Hidden width of the two-layer attention scorers.
    #[serde(default = "default_hidden")]
    pub attention_hidden: usize,
    /// Hidden width of the per-attribute output heads.
    #[serde(default = "default_hidden")]
    pub head_hidden: usize,
    /// Weight of the auxiliary loss relative to the prediction loss.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Attributes whose coordinates enter the training loss.
    #[serde(default = "all_attributes")]
    pub active_attributes: Vec<Attribute>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            enable_sam: true,
            enable_caam: true,
            enable_ascmm: true,
            preset: ChannelPreset::Paper,
            attention_hidden: 128,
            head_hidden: 128,
            lambda: 0.1,
            active_attributes: all_attributes(),
        }
    }
}

impl ModelConfig {
    /// Attention-free baseline: backbone, uniform slice mean, output heads.
    pub fn no_attention() -> Self {
        Self {
            enable_sam: false,
            enable_caam: false,
            enable_ascmm: false,
            ..Self::default()
        }
    }

    pub fn content_dim(&self) -> usize {
        self.preset.content_dim()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.enable_ascmm && !self.enable_caam {
            return Err(ModelError::Config(
                "enable_ascmm requires enable_caam: the auxiliary heads specialise \
                 the pathways that cross-attribute mixing consumes"
                    .into(),
            ));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(ModelError::Config(format!(
                "lambda must be a non-negative real, got {}",
                self.lambda
            )));
        }
        if self.attention_hidden == 0 || self.head_hidden == 0 {
            return Err(ModelError::Config("hidden widths must be positive".into()));
        }
        if self.active_attributes.is_empty() {
            return Err(ModelError::Config("active_attributes must not be empty".into()));
        }
        let mut seen = [false; crate::attributes::ATTRIBUTE_COUNT];
        for a in &self.active_attributes {
            if seen[a.index()] {
                return Err(ModelError::Config(format!(
                    "duplicate active attribute {}",
                    a.name()
                )));
            }
            seen[a.index()] = true;
        }
        Ok(())
    }

    /// Sorted indices of the active attributes.
    pub fn active_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.active_attributes.iter().map(|a| a.index()).collect();
        idx.sort_unstable();
        idx
    }

    /// True when every attribute participates in the loss.
    pub fn all_attributes_active(&self) -> bool {
        self.active_attributes.len() == crate::attributes::ATTRIBUTE_COUNT
    }
}
