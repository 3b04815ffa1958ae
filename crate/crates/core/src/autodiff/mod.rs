//! Minimal deterministic tensor algebra with reverse-mode automatic
//! differentiation, layer primitives, parameter initialization and Adam.

mod gradcheck;
mod init;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with_step, LossBuilder, GRAD_CHECK_STEP};
pub use init::{glorot_uniform, he_normal, zero_init};
pub use optim::{adam_step, AdamState, GradBatch, Param, ParamSet};
pub use tape::{Tape, ValueId};
pub use tensor::{Real, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    /// Operand shapes do not fit the operation.
    #[error("shape error: {0}")]
    Shape(String),
    /// The API was driven outside its contract.
    #[error("usage error: {0}")]
    Usage(String),
}
