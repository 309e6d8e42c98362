use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Recall, precision and F1 for one table cell.
///
/// Counts are kept as integer numerators over a shared denominator so that
/// Pass@1 averages stay exact until the final division.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics<S> {
    /// |T_total|.
    pub total: u64,
    /// |T_detected|; fractional under Pass@1.
    pub detected: S,
    /// |T_declared|; fractional under Pass@1.
    pub declared: S,
    pub recall: S,
    pub precision: Option<S>,
    pub f1: Option<S>,
}

/// Harmonic mean of precision and recall; absent when `p + r = 0`.
pub fn f1<S: Scalar>(precision: S, recall: S) -> Option<S> {
    let sum = precision + recall;
    if sum <= S::zero() {
        None
    } else {
        Some(S::from_count(2) * precision * recall / sum)
    }
}

/// Metrics from `detected`/`declared` numerators over `per_task` runs of `total` tasks.
pub fn cell_metrics<S: Scalar>(detected: u64, declared: u64, total: u64, per_task: u64) -> CellMetrics<S> {
    let per = per_task.max(1);
    let recall = if total == 0 { S::zero() } else { S::from_count(detected) / S::from_count(total * per) };
    let precision = (declared > 0).then(|| S::from_count(detected) / S::from_count(declared));
    CellMetrics {
        total,
        detected: S::from_count(detected) / S::from_count(per),
        declared: S::from_count(declared) / S::from_count(per),
        recall,
        precision,
        f1: precision.and_then(|p| f1(p, recall)),
    }
}

/// Rounds to four decimal places for report files.
pub fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}
