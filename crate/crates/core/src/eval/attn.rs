//! Attention-weight interpretability analytics.

use serde::{Deserialize, Serialize};

use crate::attributes::ATTRIBUTE_COUNT;
use crate::data::NoduleSample;
use crate::model::ForwardRecord;

use super::EvalError;

pub type Matrix9 = [[f64; ATTRIBUTE_COUNT]; ATTRIBUTE_COUNT];

/// Slice weights rescaled so a stack of equally important slices scores 1
/// per slice.
pub fn normalized_slice_weights(record: &ForwardRecord) -> Vec<f64> {
    let m = record.slice_count as f64;
    record.sam_weights.iter().map(|a| a * m).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamSliceStats {
    /// Pooled mean normalized weight of first and last slices.
    pub end_mean: f64,
    /// Pooled mean normalized weight of interior slices.
    pub nonend_mean: f64,
    /// `nonend_mean / end_mean`.
    pub ratio: f64,
    /// Number of stacks with at least 3 slices that entered the pools.
    pub qualifying_nodules: usize,
}

/// End/non-end statistics over stacks of at least 3 slices. Returns `None`
/// when no stack qualifies.
pub fn sam_slice_stats(records: &[ForwardRecord]) -> Option<SamSliceStats> {
    let mut end_sum = 0.0;
    let mut end_n = 0usize;
    let mut mid_sum = 0.0;
    let mut mid_n = 0usize;
    let mut qualifying = 0usize;
    for record in records {
        let m = record.slice_count;
        if m < 3 {
            continue;
        }
        qualifying += 1;
        let w = normalized_slice_weights(record);
        end_sum += w[0] + w[m - 1];
        end_n += 2;
        for &v in &w[1..m - 1] {
            mid_sum += v;
            mid_n += 1;
        }
    }
    if qualifying == 0 {
        return None;
    }
    let end_mean = end_sum / end_n as f64;
    let nonend_mean = mid_sum / mid_n as f64;
    Some(SamSliceStats {
        end_mean,
        nonend_mean,
        ratio: nonend_mean / end_mean,
        qualifying_nodules: qualifying,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CaamMean {
    /// Elementwise mean of the weight matrices over nodules.
    pub raw: Matrix9,
    /// Rows of the mean divided by their absolute sums, for display.
    pub display: Matrix9,
    pub nodule_count: usize,
}

pub fn caam_mean_matrix(records: &[ForwardRecord]) -> Result<CaamMean, EvalError> {
    let enabled: Vec<&ForwardRecord> = records.iter().filter(|r| r.caam_enabled).collect();
    if enabled.is_empty() {
        return Err(EvalError::Usage(
            "no record carries cross-attribute weights (module disabled everywhere)".into(),
        ));
    }
    let mut raw = [[0.0; ATTRIBUTE_COUNT]; ATTRIBUTE_COUNT];
    for r in &enabled {
        for t in 0..ATTRIBUTE_COUNT {
            for k in 0..ATTRIBUTE_COUNT {
                raw[t][k] += r.caam_weights[t][k];
            }
        }
    }
    let n = enabled.len() as f64;
    for row in raw.iter_mut() {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    let mut display = raw;
    for row in display.iter_mut() {
        let abs_sum: f64 = row.iter().map(|v| v.abs()).sum();
        if abs_sum > 0.0 {
            for v in row.iter_mut() {
                *v /= abs_sum;
            }
        }
    }
    Ok(CaamMean {
        raw,
        display,
        nodule_count: enabled.len(),
    })
}

/// Whether per-nodule correlations compare weight rows (attribute `t`'s
/// weights over all pathways) or columns (every attribute's weight on
/// pathway `k`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaamCorrMode {
    #[default]
    Rows,
    Columns,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CaamCorrelation {
    /// Mean per-nodule Pearson correlation per attribute pair; diagonal 1.
    /// Entries with no valid nodule are NaN.
    pub raw: Matrix9,
    /// Min-max normalization of `raw` into [0, 1], for display.
    pub display: Matrix9,
    /// Valid (nonzero-variance) nodules per pair.
    pub pair_counts: [[usize; ATTRIBUTE_COUNT]; ATTRIBUTE_COUNT],
    pub mode: CaamCorrMode,
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// Mean per-nodule correlation between the weight profiles of every
/// attribute pair. Zero-variance profiles are skipped per nodule and the
/// denominator adjusted.
pub fn caam_correlation_matrix(
    records: &[ForwardRecord],
    mode: CaamCorrMode,
) -> Result<CaamCorrelation, EvalError> {
    let enabled: Vec<&ForwardRecord> = records.iter().filter(|r| r.caam_enabled).collect();
    if enabled.len() < 2 {
        return Err(EvalError::Usage(format!(
            "correlation analytics need at least 2 records with cross-attribute weights, got {}",
            enabled.len()
        )));
    }
    let mut sums = [[0.0; ATTRIBUTE_COUNT]; ATTRIBUTE_COUNT];
    let mut counts = [[0usize; ATTRIBUTE_COUNT]; ATTRIBUTE_COUNT];
    for r in &enabled {
        let profiles: Vec<[f64; ATTRIBUTE_COUNT]> = match mode {
            CaamCorrMode::Rows => r.caam_weights.to_vec(),
            CaamCorrMode::Columns => {
                let mut cols = [[0.0; ATTRIBUTE_COUNT]; ATTRIBUTE_COUNT];
                for (t, row) in r.caam_weights.iter().enumerate() {
                    for (k, v) in row.iter().enumerate() {
                        cols[k][t] = *v;
                    }
                }
                cols.to_vec()
            }
        };
        for i in 0..ATTRIBUTE_COUNT {
            for j in (i + 1)..ATTRIBUTE_COUNT {
                if let Some(c) = pearson(&profiles[i], &profiles[j]) {
                    sums[i][j] += c;
                    counts[i][j] += 1;
                }
            }
        }
    }
    let mut raw = [[0.0; ATTRIBUTE_COUNT]; ATTRIBUTE_COUNT];
    for i in 0..ATTRIBUTE_COUNT {
        raw[i][i] = 1.0;
        for j in (i + 1)..ATTRIBUTE_COUNT {
            let v = if counts[i][j] > 0 {
                sums[i][j] / counts[i][j] as f64
            } else {
                f64::NAN
            };
            raw[i][j] = v;
            raw[j][i] = v;
            counts[j][i] = counts[i][j];
        }
        counts[i][i] = enabled.len();
    }
    Ok(CaamCorrelation {
        raw,
        display: min_max_normalize(&raw),
        pair_counts: counts,
        mode,
    })
}

fn min_max_normalize(m: &Matrix9) -> Matrix9 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for row in m {
        for &v in row {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    let span = hi - lo;
    let mut out = *m;
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            if v.is_finite() {
                *v = if span > 0.0 { (*v - lo) / span } else { 0.5 };
            }
        }
    }
    out
}

/// Correlation magnitudes between the average ratings of every attribute
/// pair across nodules. Pairs touching a constant column are NaN
/// (undefined); the diagonal of a varying column is 1.
pub fn gt_correlation_matrix(samples: &[NoduleSample]) -> Result<Matrix9, EvalError> {
    if samples.len() < 2 {
        return Err(EvalError::Usage(
            "ground-truth correlations need at least 2 samples".into(),
        ));
    }
    let columns: Vec<Vec<f64>> = (0..ATTRIBUTE_COUNT)
        .map(|i| samples.iter().map(|s| s.ratings[i]).collect())
        .collect();
    let mut out = [[f64::NAN; ATTRIBUTE_COUNT]; ATTRIBUTE_COUNT];
    for i in 0..ATTRIBUTE_COUNT {
        for j in i..ATTRIBUTE_COUNT {
            let v = if i == j {
                pearson(&columns[i], &columns[i]).map(|_| 1.0)
            } else {
                pearson(&columns[i], &columns[j]).map(f64::abs)
            };
            let v = v.unwrap_or(f64::NAN);
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InterobserverReport {
    /// Per attribute: mean over nodules of the mean absolute difference
    /// across all rater pairs; `None` where no nodule has two raters.
    pub per_attribute: [Option<f64>; ATTRIBUTE_COUNT],
    /// Mean of the defined per-attribute values.
    pub mean: Option<f64>,
}

/// Inter-observer variation. Returns `None` when no sample carries two or
/// more raters on any attribute.
pub fn interobserver_variation(samples: &[NoduleSample]) -> Option<InterobserverReport> {
    let mut per_attribute = [None; ATTRIBUTE_COUNT];
    let mut any = false;
    for i in 0..ATTRIBUTE_COUNT {
        let mut nodule_means = Vec::new();
        for sample in samples {
            let Some(raters) = &sample.rater_ratings else {
                continue;
            };
            let values: Vec<f64> = raters.iter().filter_map(|r| r[i]).collect();
            if values.len() < 2 {
                continue;
            }
            let mut diff_sum = 0.0;
            let mut pairs = 0usize;
            for a in 0..values.len() {
                for b in (a + 1)..values.len() {
                    diff_sum += (values[a] - values[b]).abs();
                    pairs += 1;
                }
            }
            nodule_means.push(diff_sum / pairs as f64);
        }
        if !nodule_means.is_empty() {
            per_attribute[i] = Some(nodule_means.iter().sum::<f64>() / nodule_means.len() as f64);
            any = true;
        }
    }
    if !any {
        return None;
    }
    let defined: Vec<f64> = per_attribute.iter().flatten().copied().collect();
    let mean = Some(defined.iter().sum::<f64>() / defined.len() as f64);
    Some(InterobserverReport {
        per_attribute,
        mean,
    })
}
