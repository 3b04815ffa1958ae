//! Evaluation on de-normalized scores, significance testing and
//! attention-weight analytics.

mod attn;
mod export;
mod metrics;
mod ttest;

pub use attn::{
    caam_correlation_matrix, caam_mean_matrix, gt_correlation_matrix, interobserver_variation,
    normalized_slice_weights, sam_slice_stats, CaamCorrMode, CaamCorrelation, CaamMean,
    InterobserverReport, Matrix9, SamSliceStats,
};
pub use export::{
    attn_report_json, eval_report_csv, forward_records_jsonl, write_attn_json, write_eval_csv,
};
pub use metrics::{denormalized_predictions, evaluate, evaluate_with_records, EvalReport, NoduleErrors};
pub use ttest::{paired_t_test, TTestResult};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("usage error: {0}")]
    Usage(String),
    /// Inputs admit no finite statistic.
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}
