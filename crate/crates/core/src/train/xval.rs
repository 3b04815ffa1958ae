//! 5-fold cross-validation driver.

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::data::{compute_dataset_stats, FoldSplit, IntensityStats, NoduleSample};
use crate::eval::{evaluate, EvalReport};
use crate::model::NoduleModel;

use super::{train_model, TrainConfig, TrainError, TrainReport};

/// One fold's artifacts: the trained model, its training-split statistics
/// and the held-out evaluation.
pub struct FoldOutcome<F> {
    pub fold: usize,
    pub model: NoduleModel<F>,
    pub stats: IntensityStats,
    pub train_report: TrainReport,
    pub eval: EvalReport,
}

/// Aggregate view across folds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct XvalReport {
    pub per_fold_mean_mae: Vec<f64>,
    /// Mean of the per-fold mean MAEs (the model-selection statistic).
    pub aggregate_mean_mae: f64,
    pub per_attribute_mae: [f64; 9],
}

/// Run the full protocol: per fold, compute intensity statistics on that
/// fold's training split, train from a fresh init (seed offset by the fold
/// index) and evaluate on the held-out fold. Reusing one [`FoldSplit`]
/// across config variants keeps their splits identical.
pub fn run_xval<F: Real>(
    samples: &[NoduleSample],
    config: &TrainConfig,
    split: &FoldSplit,
) -> Result<(Vec<FoldOutcome<F>>, XvalReport), TrainError> {
    let mut outcomes = Vec::with_capacity(split.fold_count);
    for fold in 0..split.fold_count {
        outcomes.push(run_fold(samples, config, split, fold)?);
    }
    let report = summarize(&outcomes);
    Ok((outcomes, report))
}

/// Train and evaluate a single fold (folds are independent, so callers may
/// distribute them over workers and reassemble).
pub fn run_fold<F: Real>(
    samples: &[NoduleSample],
    config: &TrainConfig,
    split: &FoldSplit,
    fold: usize,
) -> Result<FoldOutcome<F>, TrainError> {
    let pick = |ids: &[String]| -> Vec<NoduleSample> {
        let wanted: std::collections::HashSet<&String> = ids.iter().collect();
        samples
            .iter()
            .filter(|s| wanted.contains(&s.id))
            .cloned()
            .collect()
    };
    let train_set = pick(&split.train_ids(fold));
    let test_set = pick(&split.test_ids(fold));
    if train_set.is_empty() || test_set.is_empty() {
        return Err(TrainError::Usage(format!(
            "fold {fold} has an empty side (are the split ids from this dataset?)"
        )));
    }
    let stats = compute_dataset_stats(train_set.iter().map(|s| &s.volume.slices))?;
    let fold_config = TrainConfig {
        seed: config.seed + fold as u64,
        ..config.clone()
    };
    let (model, train_report) = train_model::<F>(&train_set, &stats, &fold_config)?;
    let eval = evaluate(&model, &stats, &test_set)?;
    Ok(FoldOutcome {
        fold,
        model,
        stats,
        train_report,
        eval,
    })
}

/// Aggregate fold evaluations into the model-selection report.
pub fn summarize<F>(outcomes: &[FoldOutcome<F>]) -> XvalReport {
    let per_fold_mean_mae: Vec<f64> = outcomes.iter().map(|o| o.eval.mean_mae).collect();
    let aggregate_mean_mae =
        per_fold_mean_mae.iter().sum::<f64>() / per_fold_mean_mae.len().max(1) as f64;
    let mut per_attribute_mae = [0.0; 9];
    for o in outcomes {
        for i in 0..9 {
            per_attribute_mae[i] += o.eval.per_attribute_mae[i];
        }
    }
    for v in per_attribute_mae.iter_mut() {
        *v /= outcomes.len().max(1) as f64;
    }
    XvalReport {
        per_fold_mean_mae,
        aggregate_mean_mae,
        per_attribute_mae,
    }
}
