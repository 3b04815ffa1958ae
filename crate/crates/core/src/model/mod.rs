//! The attention-enhanced multi-task scoring network.

pub mod checkpoint;
mod config;
mod forward;
mod params;

pub use config::{ChannelPreset, ModelConfig};
pub use forward::{
    aggregate_content, ascmm_aux_predict, backbone_forward, caam_apply, compute_loss,
    extract_record, forward_full, predict_heads, sam_weights, specialise, BoundModel,
    ForwardIds, ForwardRecord,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::{uniform_slice_weights, ConvIdx, LinearIdx, ModelParams, ParamLayout, TwoLayerIdx};

use thiserror::Error;

use crate::autodiff::{AutodiffError, Real, Tape, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// A configured model instance: switches plus weights.
#[derive(Clone, Debug)]
pub struct NoduleModel<F> {
    pub config: ModelConfig,
    pub params: ModelParams<F>,
}

impl<F: Real> NoduleModel<F> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    /// Inference on one intensity-normalized volume `[M,64,64,1]`.
    pub fn forward(&self, volume: &Tensor<F>) -> Result<ForwardRecord, ModelError> {
        let mut tape = Tape::new();
        let leaves = self.params.bind(&mut tape, false);
        let bound = BoundModel::new(&self.params, &self.config, &leaves);
        let ids = forward_full(&mut tape, &bound, volume)?;
        Ok(extract_record(&tape, &ids, &self.config))
    }
}
