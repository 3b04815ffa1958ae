//! Report serialization: MAE tables as CSV, attention analytics as JSON.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::attributes::{Attribute, ATTRIBUTE_COUNT};
use crate::data::NoduleSample;
use crate::model::ForwardRecord;

use super::attn::{
    caam_correlation_matrix, caam_mean_matrix, gt_correlation_matrix, interobserver_variation,
    normalized_slice_weights, sam_slice_stats, CaamCorrMode, Matrix9,
};
use super::metrics::EvalReport;
use super::EvalError;

/// `attribute,mae` table with a trailing `mean` row, six decimal places.
pub fn eval_report_csv(report: &EvalReport) -> String {
    let mut out = String::from("attribute,mae\n");
    for attr in Attribute::ALL {
        out.push_str(&format!(
            "{},{:.6}\n",
            attr.name(),
            report.per_attribute_mae[attr.index()]
        ));
    }
    out.push_str(&format!("mean,{:.6}\n", report.mean_mae));
    out
}

pub fn write_eval_csv(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    fs::write(path, eval_report_csv(report)).map_err(|e| EvalError::Io(e.to_string()))
}

#[derive(Serialize)]
struct SamSection {
    end_mean: Option<f64>,
    nonend_mean: Option<f64>,
    ratio: Option<f64>,
    qualifying_nodules: usize,
    per_nodule: Vec<PerNoduleWeights>,
}

#[derive(Serialize)]
struct PerNoduleWeights {
    id: String,
    normalized_weights: Vec<f64>,
}

// Nested Option so undefined entries serialize as JSON null.
type JsonMatrix = Vec<Vec<Option<f64>>>;

fn json_matrix(m: &Matrix9) -> JsonMatrix {
    m.iter()
        .map(|row| row.iter().map(|&v| v.is_finite().then_some(v)).collect())
        .collect()
}

#[derive(Serialize)]
struct AttnJson {
    sam: SamSection,
    caam_mean_raw: Option<JsonMatrix>,
    caam_mean_display: Option<JsonMatrix>,
    caam_corr_raw: Option<JsonMatrix>,
    caam_corr_display: Option<JsonMatrix>,
    caam_corr_mode: CaamCorrMode,
    gt_corr: Option<JsonMatrix>,
    ib: Option<Vec<Option<f64>>>,
    ib_mean: Option<f64>,
}

/// Assemble the full attention report for a dataset.
///
/// `records` must align one-to-one with `samples`. Sections whose inputs are
/// missing (attention disabled, no raters, too few samples) are emitted as
/// null rather than failing the export.
pub fn attn_report_json(
    records: &[ForwardRecord],
    samples: &[NoduleSample],
    corr_mode: CaamCorrMode,
) -> Result<String, EvalError> {
    if records.len() != samples.len() {
        return Err(EvalError::Usage(format!(
            "{} records for {} samples",
            records.len(),
            samples.len()
        )));
    }
    let sam = sam_slice_stats(records);
    let per_nodule = records
        .iter()
        .zip(samples)
        .map(|(r, s)| PerNoduleWeights {
            id: s.id.clone(),
            normalized_weights: normalized_slice_weights(r),
        })
        .collect();
    let caam_mean = caam_mean_matrix(records).ok();
    let caam_corr = caam_correlation_matrix(records, corr_mode).ok();
    let gt = gt_correlation_matrix(samples).ok();
    let ib = interobserver_variation(samples);

    let json = AttnJson {
        sam: SamSection {
            end_mean: sam.as_ref().map(|s| s.end_mean),
            nonend_mean: sam.as_ref().map(|s| s.nonend_mean),
            ratio: sam.as_ref().map(|s| s.ratio),
            qualifying_nodules: sam.as_ref().map(|s| s.qualifying_nodules).unwrap_or(0),
            per_nodule,
        },
        caam_mean_raw: caam_mean.as_ref().map(|m| json_matrix(&m.raw)),
        caam_mean_display: caam_mean.as_ref().map(|m| json_matrix(&m.display)),
        caam_corr_raw: caam_corr.as_ref().map(|c| json_matrix(&c.raw)),
        caam_corr_display: caam_corr.as_ref().map(|c| json_matrix(&c.display)),
        caam_corr_mode: corr_mode,
        gt_corr: gt.as_ref().map(json_matrix),
        ib: ib
            .as_ref()
            .map(|r| r.per_attribute.to_vec()),
        ib_mean: ib.as_ref().and_then(|r| r.mean),
    };
    serde_json::to_string_pretty(&json).map_err(|e| EvalError::Io(e.to_string()))
}

pub fn write_attn_json(
    records: &[ForwardRecord],
    samples: &[NoduleSample],
    corr_mode: CaamCorrMode,
    path: &Path,
) -> Result<(), EvalError> {
    let json = attn_report_json(records, samples, corr_mode)?;
    fs::write(path, json).map_err(|e| EvalError::Io(e.to_string()))
}

/// Per-nodule dump of the attention fields, one JSON object per line.
pub fn forward_records_jsonl(
    records: &[ForwardRecord],
    samples: &[NoduleSample],
) -> Result<String, EvalError> {
    if records.len() != samples.len() {
        return Err(EvalError::Usage(format!(
            "{} records for {} samples",
            records.len(),
            samples.len()
        )));
    }
    #[derive(Serialize)]
    struct Line<'a> {
        id: &'a str,
        slice_count: usize,
        sam_weights: &'a [f64],
        caam_weights: &'a [[f64; ATTRIBUTE_COUNT]; ATTRIBUTE_COUNT],
        aux_predictions: &'a [f64; ATTRIBUTE_COUNT],
        final_predictions: &'a [f64; ATTRIBUTE_COUNT],
    }
    let mut out = String::new();
    for (r, s) in records.iter().zip(samples) {
        let line = Line {
            id: &s.id,
            slice_count: r.slice_count,
            sam_weights: &r.sam_weights,
            caam_weights: &r.caam_weights,
            aux_predictions: &r.aux_predictions,
            final_predictions: &r.final_predictions,
        };
        out.push_str(&serde_json::to_string(&line).map_err(|e| EvalError::Io(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}
