//! Run-level summaries derived from step reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trainer::StepReport;

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub initial_true_quality: f64,
    pub final_true_quality: f64,
    /// Mean raw reward of the last step; absent for zero-step runs.
    pub final_raw_reward: Option<f64>,
    /// Trapezoidal area under the quality curve, unit step spacing.
    pub auc: f64,
}

/// Quality at the start of each step: the exact expectation when available,
/// otherwise the sampled mean.
pub fn step_quality<F: Scalar>(report: &StepReport<F>) -> f64 {
    report
        .expected_true_quality
        .unwrap_or(report.mean_true_quality)
        .as_f64()
}

/// Per-step qualities followed by the quality of the final policy.
pub fn quality_curve<F: Scalar>(reports: &[StepReport<F>], final_quality: f64) -> Vec<f64> {
    reports.iter().map(step_quality).chain([final_quality]).collect()
}

pub fn trapezoid_auc(curve: &[f64]) -> f64 {
    curve.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum()
}

pub fn summarize<F: Scalar>(reports: &[StepReport<F>], initial_quality: f64, final_quality: f64) -> RunSummary {
    let curve = quality_curve(reports, final_quality);
    RunSummary {
        steps: reports.len(),
        initial_true_quality: initial_quality,
        final_true_quality: final_quality,
        final_raw_reward: reports.last().map(|r| r.mean_raw_reward.as_f64()),
        auc: trapezoid_auc(&curve),
    }
}

/// One JSON object per line, newline-terminated.
pub fn to_jsonl<F: Scalar>(reports: &[StepReport<F>]) -> Result<String> {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::json("serializing step report", e))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_and_median() {
        assert_eq!(trapezoid_auc(&[1.0]), 0.0);
        assert_eq!(trapezoid_auc(&[0.0, 1.0, 1.0]), 1.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn empty_run_summary() {
        let s = summarize::<f64>(&[], 0.55, 0.55);
        assert_eq!(s.steps, 0);
        assert_eq!(s.auc, 0.0);
        assert_eq!(s.final_raw_reward, None);
        assert_eq!(to_jsonl::<f64>(&[]).unwrap(), "");
    }
}
