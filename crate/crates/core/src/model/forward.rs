//! Assembly of the scoring network on the autodiff tape.
//!
//! The slices of one nodule ride in the batch dimension, so a volume of any
//! depth flows through the shared backbone in a single pass. Attention
//! modules are inserted according to the config switches; the record of a
//! forward pass always carries the full schema (uniform slice weights and
//! zero cross-attribute weights when the producing module is off).

use crate::attributes::ATTRIBUTE_COUNT;
use crate::autodiff::{Real, Tape, Tensor, ValueId};

use super::config::ModelConfig;
use super::params::{uniform_slice_weights, ModelParams, ParamLayout};
use super::ModelError;

/// A model's parameters bound onto one tape.
pub struct BoundModel<'a> {
    pub layout: &'a ParamLayout,
    pub leaves: &'a [ValueId],
    pub config: &'a ModelConfig,
}

impl<'a> BoundModel<'a> {
    pub fn new<F: Real>(
        params: &'a ModelParams<F>,
        config: &'a ModelConfig,
        leaves: &'a [ValueId],
    ) -> Self {
        debug_assert_eq!(params.set.len(), leaves.len());
        Self {
            layout: &params.layout,
            leaves,
            config,
        }
    }

    fn id(&self, index: usize) -> ValueId {
        self.leaves[index]
    }
}

/// Tape handles for every intermediate of one nodule's forward pass.
pub struct ForwardIds {
    pub slice_count: usize,
    /// Per-slice content vectors `[M, d]`.
    pub slice_vectors: ValueId,
    /// Slice weights `[M]` (softmax output, or a uniform constant).
    pub sam_weights: ValueId,
    /// Aggregated nodule content `[d]`.
    pub content: ValueId,
    /// Specialised per-attribute vectors, each `[1, d]`.
    pub specialised: Option<Vec<ValueId>>,
    /// Auxiliary score predictions `[9]`.
    pub aux_predictions: Option<ValueId>,
    /// Cross-attribute weight rows, each `[9]`.
    pub caam_rows: Option<Vec<ValueId>>,
    /// Mixed per-attribute features, each `[d]`.
    pub mixed: Option<Vec<ValueId>>,
    /// Final predictions `[9]`, all in (0, 1).
    pub final_predictions: ValueId,
}

/// Shared feature extraction: four conv/ReLU/pool blocks then global
/// average pooling, `[M,64,64,1]` → `[M,d]`.
pub fn backbone_forward<F: Real>(
    tape: &mut Tape<F>,
    bound: &BoundModel,
    volume: ValueId,
) -> Result<ValueId, ModelError> {
    let shape = tape.value(volume).shape().to_vec();
    if shape.len() != 4 || shape[1] != 64 || shape[2] != 64 || shape[3] != 1 {
        return Err(ModelError::Shape(format!(
            "backbone expects [M,64,64,1] volumes, got {:?}",
            shape
        )));
    }
    let mut x = volume;
    for block in &bound.layout.blocks {
        let k = bound.id(block.kernel);
        let b = bound.id(block.bias);
        x = tape.conv2d(x, k, b)?;
        x = tape.relu(x);
        x = tape.maxpool2d(x)?;
    }
    Ok(tape.global_avg_pool(x)?)
}

/// Slice attention: a shared two-layer scorer per slice followed by a
/// softmax over the stack, `[M,d]` → `[M]`.
pub fn sam_weights<F: Real>(
    tape: &mut Tape<F>,
    bound: &BoundModel,
    slice_vectors: ValueId,
) -> Result<ValueId, ModelError> {
    let m = tape.value(slice_vectors).shape()[0];
    let sam = &bound.layout.sam;
    let h = tape.linear(slice_vectors, bound.id(sam.w0), bound.id(sam.b0))?;
    let h = tape.relu(h);
    let logits = tape.linear(h, bound.id(sam.w1), bound.id(sam.b1))?;
    let flat = tape.reshape(logits, &[m])?;
    Ok(tape.softmax_vector(flat)?)
}

/// Weighted aggregation of slice vectors into one content vector.
pub fn aggregate_content<F: Real>(
    tape: &mut Tape<F>,
    slice_vectors: ValueId,
    weights: ValueId,
) -> Result<ValueId, ModelError> {
    Ok(tape.weighted_sum_rows(slice_vectors, weights)?)
}

/// Per-attribute specialisation of the content vector, nine `[1,d]` rows.
pub fn specialise<F: Real>(
    tape: &mut Tape<F>,
    bound: &BoundModel,
    content_row: ValueId,
) -> Result<Vec<ValueId>, ModelError> {
    let mut rows = Vec::with_capacity(ATTRIBUTE_COUNT);
    for lin in &bound.layout.spec {
        let y = tape.linear(content_row, bound.id(lin.w), bound.id(lin.b))?;
        rows.push(tape.relu(y));
    }
    Ok(rows)
}

/// Auxiliary per-attribute score regression used only in the training loss.
pub fn ascmm_aux_predict<F: Real>(
    tape: &mut Tape<F>,
    bound: &BoundModel,
    specialised: &[ValueId],
) -> Result<ValueId, ModelError> {
    if !bound.config.enable_ascmm {
        return Err(ModelError::Usage(
            "auxiliary prediction requested with the auxiliary module disabled".into(),
        ));
    }
    let mut scores = Vec::with_capacity(ATTRIBUTE_COUNT);
    for (row, lin) in specialised.iter().zip(&bound.layout.ascmm) {
        let y = tape.linear(*row, bound.id(lin.w), bound.id(lin.b))?;
        let y = tape.sigmoid(y);
        scores.push(tape.reshape(y, &[1])?);
    }
    Ok(tape.concat_rows(&scores)?)
}

/// Cross-attribute mixing: each attribute scores all nine specialised
/// vectors (raw weights, no normalization) and mixes them by weighted sum.
/// Returns the nine weight rows and the nine mixed feature vectors.
pub fn caam_apply<F: Real>(
    tape: &mut Tape<F>,
    bound: &BoundModel,
    specialised: &[ValueId],
) -> Result<(Vec<ValueId>, Vec<ValueId>), ModelError> {
    if !bound.config.enable_caam {
        return Err(ModelError::Usage(
            "cross-attribute mixing requested with the module disabled".into(),
        ));
    }
    let matrix = tape.concat_rows(specialised)?;
    let mut q_rows = Vec::with_capacity(ATTRIBUTE_COUNT);
    let mut mixed = Vec::with_capacity(ATTRIBUTE_COUNT);
    for unit in &bound.layout.caam {
        let h = tape.linear(matrix, bound.id(unit.w0), bound.id(unit.b0))?;
        let h = tape.relu(h);
        let q = tape.linear(h, bound.id(unit.w1), bound.id(unit.b1))?;
        let q = tape.reshape(q, &[ATTRIBUTE_COUNT])?;
        mixed.push(tape.weighted_sum_rows(matrix, q)?);
        q_rows.push(q);
    }
    Ok((q_rows, mixed))
}

/// Per-attribute output heads: two fully connected layers and a sigmoid.
/// `features[t]` is a `[d]` or `[1,d]` feature for attribute `t`; the same
/// id may be passed for all nine (no-attention routing).
pub fn predict_heads<F: Real>(
    tape: &mut Tape<F>,
    bound: &BoundModel,
    features: &[ValueId],
) -> Result<ValueId, ModelError> {
    if features.len() != ATTRIBUTE_COUNT {
        return Err(ModelError::Shape(format!(
            "expected {} head features, got {}",
            ATTRIBUTE_COUNT,
            features.len()
        )));
    }
    let d = bound.config.content_dim();
    let mut scores = Vec::with_capacity(ATTRIBUTE_COUNT);
    for (feat, head) in features.iter().zip(&bound.layout.head) {
        let row = if tape.value(*feat).rank() == 1 {
            tape.reshape(*feat, &[1, d])?
        } else {
            *feat
        };
        let h = tape.linear(row, bound.id(head.w0), bound.id(head.b0))?;
        let h = tape.relu(h);
        let y = tape.linear(h, bound.id(head.w1), bound.id(head.b1))?;
        let y = tape.sigmoid(y);
        scores.push(tape.reshape(y, &[1])?);
    }
    Ok(tape.concat_rows(&scores)?)
}

/// Full forward pass for one nodule volume under the config switches.
pub fn forward_full<F: Real>(
    tape: &mut Tape<F>,
    bound: &BoundModel,
    volume: &Tensor<F>,
) -> Result<ForwardIds, ModelError> {
    let m = volume.shape()[0];
    let vol = tape.constant(volume.clone());
    let xg = backbone_forward(tape, bound, vol)?;

    let alpha = if bound.config.enable_sam {
        sam_weights(tape, bound, xg)?
    } else {
        tape.constant(uniform_slice_weights(m))
    };
    let fc = aggregate_content(tape, xg, alpha)?;

    if bound.config.enable_caam {
        let d = bound.config.content_dim();
        let fc_row = tape.reshape(fc, &[1, d])?;
        let xs = specialise(tape, bound, fc_row)?;
        let aux = if bound.config.enable_ascmm {
            Some(ascmm_aux_predict(tape, bound, &xs)?)
        } else {
            None
        };
        let (q_rows, mixed) = caam_apply(tape, bound, &xs)?;
        let preds = predict_heads(tape, bound, &mixed)?;
        Ok(ForwardIds {
            slice_count: m,
            slice_vectors: xg,
            sam_weights: alpha,
            content: fc,
            specialised: Some(xs),
            aux_predictions: aux,
            caam_rows: Some(q_rows),
            mixed: Some(mixed),
            final_predictions: preds,
        })
    } else {
        let feats = vec![fc; ATTRIBUTE_COUNT];
        let preds = predict_heads(tape, bound, &feats)?;
        Ok(ForwardIds {
            slice_count: m,
            slice_vectors: xg,
            sam_weights: alpha,
            content: fc,
            specialised: None,
            aux_predictions: None,
            caam_rows: None,
            mixed: None,
            final_predictions: preds,
        })
    }
}

/// Per-nodule training loss: squared prediction error plus `lambda` times
/// the auxiliary squared error when the auxiliary module is on. With a
/// strict subset of active attributes only those coordinates enter either
/// norm.
pub fn compute_loss<F: Real>(
    tape: &mut Tape<F>,
    ids: &ForwardIds,
    target_normalized: &[f64; ATTRIBUTE_COUNT],
    config: &ModelConfig,
) -> Result<ValueId, ModelError> {
    for (i, &t) in target_normalized.iter().enumerate() {
        if !(0.0..=1.0).contains(&t) {
            return Err(ModelError::Validation(format!(
                "normalized target coordinate {i} is {t}, outside [0, 1]"
            )));
        }
    }
    let target = Tensor::from_vec(target_normalized.iter().map(|&t| F::of_f64(t)).collect());
    let target = tape.constant(target);

    let (pred, target) = if config.all_attributes_active() {
        (ids.final_predictions, target)
    } else {
        let idx = config.active_indices();
        (
            tape.select_coords(ids.final_predictions, &idx)?,
            tape.select_coords(target, &idx)?,
        )
    };
    let pred_loss = tape.mse_loss(pred, target)?;

    match ids.aux_predictions {
        Some(aux) => {
            let (aux, aux_target) = if config.all_attributes_active() {
                (aux, target)
            } else {
                // target is already the selected vector
                (tape.select_coords(aux, &config.active_indices())?, target)
            };
            let aux_loss = tape.mse_loss(aux, aux_target)?;
            let scaled = tape.scale(aux_loss, F::of_f64(config.lambda));
            Ok(tape.add(scaled, pred_loss)?)
        }
        None => Ok(pred_loss),
    }
}

/// Plain-value record of everything a forward pass produced.
#[derive(Clone, Debug)]
pub struct ForwardRecord {
    pub slice_count: usize,
    /// `M × d` per-slice content vectors.
    pub slice_vectors: Vec<Vec<f64>>,
    /// `M` slice weights; positive, summing to 1.
    pub sam_weights: Vec<f64>,
    /// `d` aggregated content.
    pub content: Vec<f64>,
    /// `9 × d` specialised vectors (zeros when mixing is off).
    pub specialised: Vec<Vec<f64>>,
    /// Auxiliary predictions (zeros when the auxiliary module is off).
    pub aux_predictions: [f64; ATTRIBUTE_COUNT],
    /// Cross-attribute weight matrix, row `t` = weights of attribute `t`
    /// over all nine pathways (zeros when mixing is off).
    pub caam_weights: [[f64; ATTRIBUTE_COUNT]; ATTRIBUTE_COUNT],
    /// `9 × d` mixed features (zeros when mixing is off).
    pub mixed: Vec<Vec<f64>>,
    /// Final predictions, each strictly inside (0, 1).
    pub final_predictions: [f64; ATTRIBUTE_COUNT],
    /// Whether the cross-attribute weights are meaningful.
    pub caam_enabled: bool,
}

/// Read the values of a completed forward pass out of the tape.
pub fn extract_record<F: Real>(tape: &Tape<F>, ids: &ForwardIds, config: &ModelConfig) -> ForwardRecord {
    let d = config.content_dim();
    let xg = tape.value(ids.slice_vectors);
    let slice_vectors = xg
        .data()
        .chunks_exact(d)
        .map(|row| row.iter().map(|v| v.as_f64()).collect())
        .collect();
    let zeros_rows = || vec![vec![0.0f64; d]; ATTRIBUTE_COUNT];

    let specialised = match &ids.specialised {
        Some(rows) => rows
            .iter()
            .map(|id| tape.value(*id).to_f64_vec())
            .collect(),
        None => zeros_rows(),
    };
    let mixed = match &ids.mixed {
        Some(rows) => rows
            .iter()
            .map(|id| tape.value(*id).to_f64_vec())
            .collect(),
        None => zeros_rows(),
    };
    let mut caam_weights = [[0.0; ATTRIBUTE_COUNT]; ATTRIBUTE_COUNT];
    if let Some(rows) = &ids.caam_rows {
        for (t, id) in rows.iter().enumerate() {
            for (k, v) in tape.value(*id).data().iter().enumerate() {
                caam_weights[t][k] = v.as_f64();
            }
        }
    }
    let mut aux_predictions = [0.0; ATTRIBUTE_COUNT];
    if let Some(id) = ids.aux_predictions {
        for (k, v) in tape.value(id).data().iter().enumerate() {
            aux_predictions[k] = v.as_f64();
        }
    }
    let mut final_predictions = [0.0; ATTRIBUTE_COUNT];
    for (k, v) in tape.value(ids.final_predictions).data().iter().enumerate() {
        final_predictions[k] = v.as_f64();
    }

    ForwardRecord {
        slice_count: ids.slice_count,
        slice_vectors,
        sam_weights: tape.value(ids.sam_weights).to_f64_vec(),
        content: tape.value(ids.content).to_f64_vec(),
        specialised,
        aux_predictions,
        caam_weights,
        mixed,
        final_predictions,
        caam_enabled: ids.caam_rows.is_some(),
    }
}
