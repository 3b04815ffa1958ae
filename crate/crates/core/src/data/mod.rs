//! Dataset formats, preprocessing, augmentation, fold splitting and the
//! synthetic corpus generator.

mod augment;
mod folds;
mod manifest;
mod preprocess;
mod synth;
mod volume;

pub use augment::{draw_augmentation, Augmentation};
pub use folds::{make_folds, FoldSplit, FOLD_COUNT};
pub use manifest::{
    read_stats, write_stats, DatasetManifest, ManifestEntry, NoduleSample,
};
pub use preprocess::{
    bilinear_resize, compute_dataset_stats, crop_square, normalize_intensity, square_window,
    BBox, IntensityStats, Window, OUT_OF_IMAGE_HU, WINDOW_OCCUPANCY,
};
pub use synth::{
    malignancy_from, synth_generate, synth_nodules, synth_samples, SynthConfig, SynthNodule,
    SynthParams, MALIGNANCY_WEIGHTS,
};
pub use volume::{load_volume, save_volume, NoduleVolume, LATERAL, VOLUME_MAGIC};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// A file does not parse as its declared format.
    #[error("format error: {0}")]
    Format(String),
    /// Parsed content violates a dataset contract.
    #[error("validation error: {0}")]
    Validation(String),
}
