//! Attention-enhanced multi-task scoring of lung-nodule visual attributes.
//!
//! The crate is organised as five layers:
//!
//! * [`autodiff`] — tensors, a reverse-mode tape, layer primitives, Adam.
//! * [`model`] — the scoring network: shared CNN backbone, slice attention,
//!   per-attribute specialisation with auxiliary heads, cross-attribute
//!   mixing, sigmoid output heads, and the combined training loss.
//! * [`data`] — volume/manifest formats, preprocessing, augmentation,
//!   fold splitting and a deterministic synthetic corpus generator.
//! * [`train`] — the training loop and the 5-fold cross-validation driver.
//! * [`eval`] — MAE evaluation, significance testing and attention-weight
//!   analytics.

pub mod attributes;
pub mod autodiff;
pub mod data;
pub mod eval;
pub mod model;
pub mod train;
