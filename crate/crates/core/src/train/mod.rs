//! Deterministic end-to-end training and the 5-fold protocol driver.

mod xval;

pub use xval::{run_fold, run_xval, FoldOutcome, XvalReport};

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{adam_step, AdamState, GradBatch, Real, Tape, Tensor};
use crate::data::{draw_augmentation, normalize_intensity, IntensityStats, NoduleSample};
use crate::model::{
    compute_loss, forward_full, BoundModel, ModelConfig, ModelParams, NoduleModel,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("usage error: {0}")]
    Usage(String),
    /// Training diverged; carries the failing epoch and nodule.
    #[error("non-finite loss at epoch {epoch}, nodule {nodule_id:?} (value {value})")]
    NonFinite {
        epoch: usize,
        nodule_id: String,
        value: f64,
    },
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
}

fn default_epochs() -> usize {
    150
}
fn default_lr() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_weight_decay() -> f64 {
    1e-4
}
fn default_true() -> bool {
    true
}

/// Optimization protocol. The auxiliary-loss weight lives on
/// [`ModelConfig::lambda`], next to the switches it belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub augment: bool,
    #[serde(default)]
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            weight_decay: default_weight_decay(),
            seed: 0,
            augment: true,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Usage("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Usage(format!("lr must be positive, got {}", self.lr)));
        }
        if self.weight_decay < 0.0 {
            return Err(TrainError::Usage("weight decay must be non-negative".into()));
        }
        self.model.validate()?;
        Ok(())
    }
}

/// Per-epoch mean training losses plus provenance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub seed: u64,
    pub wall_time_secs: f64,
}

/// Train a fresh model on the given samples.
///
/// One optimization step per nodule (all its slices at once); example order
/// reshuffles every epoch; gradients never survive past a step because each
/// nodule records onto a fresh tape. The run is a pure function of
/// `(samples, stats, config)`.
pub fn train_model<F: Real>(
    samples: &[NoduleSample],
    stats: &IntensityStats,
    config: &TrainConfig,
) -> Result<(NoduleModel<F>, TrainReport), TrainError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(TrainError::Usage("training set is empty".into()));
    }
    let start = Instant::now();

    // normalized volumes in [M,h,w] form (augmentation layout)
    let volumes: Vec<Tensor<F>> = samples
        .iter()
        .map(|s| Ok(normalize_intensity(&s.volume.slices, stats)?.cast::<F>()))
        .collect::<Result<_, TrainError>>()?;
    let targets: Vec<[f64; 9]> = samples.iter().map(|s| s.normalized_ratings()).collect();

    let params = ModelParams::<F>::init(&config.model, config.seed)?;
    let mut model = NoduleModel {
        config: config.model.clone(),
        params,
    };
    let active = model.params.active_indices(&config.model);
    let mut adam = AdamState::new(config.lr, config.beta1, config.beta2, config.weight_decay);
    // the training stream is separate from the init stream
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7C0F_FEE5_EED5_1DE5);

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut loss_sum = 0.0;
        for &idx in &order {
            let volume = if config.augment {
                draw_augmentation(&mut rng).apply(&volumes[idx])
            } else {
                volumes[idx].clone()
            };
            let m = volume.shape()[0];
            let input = volume
                .reshaped(&[m, 64, 64, 1])
                .expect("unit axis keeps the element count");

            let mut tape = Tape::new();
            let leaves = model.params.bind(&mut tape, true);
            let bound = BoundModel::new(&model.params, &config.model, &leaves);
            let ids = forward_full(&mut tape, &bound, &input)?;
            let loss = compute_loss(&mut tape, &ids, &targets[idx], &config.model)?;
            let loss_value = tape.value(loss).item().as_f64();
            if !loss_value.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    nodule_id: samples[idx].id.clone(),
                    value: loss_value,
                });
            }
            loss_sum += loss_value;
            tape.backward(loss)?;
            let grads = GradBatch {
                entries: active
                    .iter()
                    .map(|&p| (p, tape.grad(leaves[p]).cloned()))
                    .collect(),
            };
            adam_step(&mut model.params.set, &grads, &mut adam)?;
        }
        epoch_losses.push(loss_sum / samples.len() as f64);
    }

    Ok((
        model,
        TrainReport {
            epoch_losses,
            seed: config.seed,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compute_dataset_stats, synth_samples, SynthConfig};
    use crate::model::ChannelPreset;

    fn tiny_train_config(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            seed,
            model: ModelConfig {
                preset: ChannelPreset::Tiny,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    fn small_corpus(n: usize) -> (Vec<NoduleSample>, IntensityStats) {
        let samples = synth_samples(&SynthConfig {
            count: n,
            seed: 5,
            rater_count: 1,
        })
        .unwrap();
        let stats = compute_dataset_stats(samples.iter().map(|s| &s.volume.slices)).unwrap();
        (samples, stats)
    }

    #[test]
    fn near_zero_learning_rate_leaves_parameters_unchanged() {
        let (samples, stats) = small_corpus(3);
        let mut config = tiny_train_config(2, 1);
        config.lr = 1e-30;
        config.augment = false;
        let before = ModelParams::<f32>::init(&config.model, config.seed).unwrap();
        let (model, report) = train_model::<f32>(&samples, &stats, &config).unwrap();
        assert_eq!(report.epoch_losses.len(), 2);
        for (a, b) in before.set.iter().zip(model.params.set.iter()) {
            for (x, y) in a.value.data().iter().zip(b.value.data()) {
                assert!((x - y).abs() < 1e-6, "{}: {x} vs {y}", a.name);
            }
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_parameters() {
        let (samples, stats) = small_corpus(4);
        let config = tiny_train_config(2, 9);
        let (a, _) = train_model::<f32>(&samples, &stats, &config).unwrap();
        let (b, _) = train_model::<f32>(&samples, &stats, &config).unwrap();
        for (x, y) in a.params.set.iter().zip(b.params.set.iter()) {
            assert_eq!(x.value, y.value, "{} differs", x.name);
        }
    }

    #[test]
    fn losses_are_finite_and_reported_per_epoch() {
        let (samples, stats) = small_corpus(4);
        let config = tiny_train_config(3, 2);
        let (_, report) = train_model::<f32>(&samples, &stats, &config).unwrap();
        assert_eq!(report.epoch_losses.len(), 3);
        assert!(report.epoch_losses.iter().all(|l| l.is_finite()));
        assert_eq!(report.seed, 2);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let (_, stats) = small_corpus(1);
        let config = tiny_train_config(1, 0);
        assert!(train_model::<f32>(&[], &stats, &config).is_err());
    }

    #[test]
    fn lambda_zero_matches_ascmm_disabled_trajectories() {
        let (samples, stats) = small_corpus(3);
        let mut with_aux = tiny_train_config(2, 4);
        with_aux.model.lambda = 0.0;
        let mut no_aux = tiny_train_config(2, 4);
        no_aux.model.enable_ascmm = false;

        let (a, _) = train_model::<f32>(&samples, &stats, &with_aux).unwrap();
        let (b, _) = train_model::<f32>(&samples, &stats, &no_aux).unwrap();
        let vol = samples[0].volume.as_model_input().cast::<f32>();
        let ra = a.forward(&vol).unwrap();
        let rb = b.forward(&vol).unwrap();
        assert_eq!(ra.final_predictions, rb.final_predictions);
    }
}
