//! Mean absolute error on de-normalized scores.

use serde::{Deserialize, Serialize};

use crate::attributes::{denormalize_score, Attribute, ATTRIBUTE_COUNT};
use crate::autodiff::Real;
use crate::data::{normalize_intensity, IntensityStats, NoduleSample};
use crate::model::{ForwardRecord, NoduleModel};

use super::EvalError;

/// Absolute errors of one nodule, original scales.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoduleErrors {
    pub id: String,
    pub abs_errors: [f64; ATTRIBUTE_COUNT],
    /// Mean across the nine attributes (the per-nodule t-test statistic).
    pub mean_abs_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_attribute_mae: [f64; ATTRIBUTE_COUNT],
    /// Arithmetic mean of the nine per-attribute MAEs.
    pub mean_mae: f64,
    pub nodule_count: usize,
    pub per_nodule: Vec<NoduleErrors>,
}

/// De-normalized predictions of a forward record, original scales.
pub fn denormalized_predictions(record: &ForwardRecord) -> [f64; ATTRIBUTE_COUNT] {
    let mut out = [0.0; ATTRIBUTE_COUNT];
    for attr in Attribute::ALL {
        out[attr.index()] = denormalize_score(attr, record.final_predictions[attr.index()]);
    }
    out
}

/// Evaluate a model on held-out samples: per nodule, forward without
/// augmentation, de-normalize per attribute scale, absolute error against
/// the average radiologist rating. Also returns the raw forward records for
/// the attention analytics.
pub fn evaluate_with_records<F: Real>(
    model: &NoduleModel<F>,
    stats: &IntensityStats,
    samples: &[NoduleSample],
) -> Result<(EvalReport, Vec<ForwardRecord>), EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Usage("evaluation needs at least one sample".into()));
    }
    let mut records = Vec::with_capacity(samples.len());
    let mut per_nodule = Vec::with_capacity(samples.len());
    let mut sums = [0.0; ATTRIBUTE_COUNT];
    for sample in samples {
        let normalized = normalize_intensity(&sample.volume.slices, stats)?;
        let m = sample.volume.depth();
        let input = normalized
            .reshaped(&[m, 64, 64, 1])
            .expect("unit axis keeps the element count")
            .cast::<F>();
        let record = model.forward(&input)?;
        let preds = denormalized_predictions(&record);
        let mut abs_errors = [0.0; ATTRIBUTE_COUNT];
        for i in 0..ATTRIBUTE_COUNT {
            abs_errors[i] = (preds[i] - sample.ratings[i]).abs();
            sums[i] += abs_errors[i];
        }
        let mean_abs_error = abs_errors.iter().sum::<f64>() / ATTRIBUTE_COUNT as f64;
        per_nodule.push(NoduleErrors {
            id: sample.id.clone(),
            abs_errors,
            mean_abs_error,
        });
        records.push(record);
    }
    let n = samples.len() as f64;
    let mut per_attribute_mae = [0.0; ATTRIBUTE_COUNT];
    for i in 0..ATTRIBUTE_COUNT {
        per_attribute_mae[i] = sums[i] / n;
    }
    let mean_mae = per_attribute_mae.iter().sum::<f64>() / ATTRIBUTE_COUNT as f64;
    Ok((
        EvalReport {
            per_attribute_mae,
            mean_mae,
            nodule_count: samples.len(),
            per_nodule,
        },
        records,
    ))
}

pub fn evaluate<F: Real>(
    model: &NoduleModel<F>,
    stats: &IntensityStats,
    samples: &[NoduleSample],
) -> Result<EvalReport, EvalError> {
    evaluate_with_records(model, stats, samples).map(|(r, _)| r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_nodule_known_error() {
        // GT subtlety 3.0, predicted normalized 0.625 -> 3.5 on (1,5): MAE 0.5
        let pred = denormalize_score(Attribute::Subtlety, 0.625);
        assert!((pred - 3.5).abs() < 1e-12);
    }

    #[test]
    fn denormalization_uses_each_scale() {
        let mut record_preds = [0.5; ATTRIBUTE_COUNT];
        record_preds[Attribute::Calcification.index()] = 0.5;
        let rec = ForwardRecord {
            slice_count: 1,
            slice_vectors: vec![],
            sam_weights: vec![1.0],
            content: vec![],
            specialised: vec![],
            aux_predictions: [0.0; ATTRIBUTE_COUNT],
            caam_weights: [[0.0; ATTRIBUTE_COUNT]; ATTRIBUTE_COUNT],
            mixed: vec![],
            final_predictions: record_preds,
            caam_enabled: false,
        };
        let preds = denormalized_predictions(&rec);
        assert_eq!(preds[Attribute::Subtlety.index()], 3.0);
        assert_eq!(preds[Attribute::Calcification.index()], 3.5);
        assert_eq!(preds[Attribute::InternalStructure.index()], 2.5);
    }
}
