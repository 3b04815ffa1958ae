//! Paired two-sided t-test on per-nodule absolute errors.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::EvalError;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    /// Two-sided p value from the t distribution with n−1 degrees of freedom.
    pub p: f64,
    pub n: usize,
    pub mean_difference: f64,
}

/// Paired t-test over two error series measured on the same nodules in the
/// same order.
///
/// Identical series are a well-defined no-difference case (t = 0, p = 1);
/// any other zero-variance difference vector has no finite statistic and is
/// rejected.
pub fn paired_t_test(errors_a: &[f64], errors_b: &[f64]) -> Result<TTestResult, EvalError> {
    if errors_a.len() != errors_b.len() {
        return Err(EvalError::Usage(format!(
            "paired series differ in length: {} vs {}",
            errors_a.len(),
            errors_b.len()
        )));
    }
    let n = errors_a.len();
    if n < 2 {
        return Err(EvalError::Usage("paired t-test needs at least 2 pairs".into()));
    }
    let diffs: Vec<f64> = errors_a.iter().zip(errors_b).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
    if var == 0.0 {
        if mean == 0.0 {
            return Ok(TTestResult {
                t: 0.0,
                p: 1.0,
                n,
                mean_difference: 0.0,
            });
        }
        return Err(EvalError::Degenerate(
            "difference vector has zero variance but nonzero mean".into(),
        ));
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("valid degrees of freedom for n >= 2");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(TTestResult {
        t,
        p,
        n,
        mean_difference: mean,
    })
}
