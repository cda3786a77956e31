//! Evaluation measures for surrogate predictions.
//!
//! All metrics pool the (site, simulation) test pairs — callers flatten the
//! grid before scoring. Threshold classification is strict `>` on both the
//! truth and the prediction, so a value exactly at the threshold counts as
//! "not exceeding".

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flood-depth classification threshold in feet.
pub const FLOOD_THRESHOLD: f64 = 4.0;

/// Root mean squared prediction error.
pub fn rmspe(y_true: &[f64], y_pred: &[f64]) -> f64 {
    assert_eq!(y_true.len(), y_pred.len(), "rmspe: length mismatch");
    assert!(!y_true.is_empty(), "rmspe of nothing");
    let ss: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| (t - p) * (t - p))
        .sum();
    (ss / y_true.len() as f64).sqrt()
}

/// Fraction of truths inside their (closed) intervals.
pub fn coverage(y_true: &[f64], lower: &[f64], upper: &[f64]) -> Result<f64> {
    assert_eq!(y_true.len(), lower.len(), "coverage: length mismatch");
    assert_eq!(y_true.len(), upper.len(), "coverage: length mismatch");
    assert!(!y_true.is_empty(), "coverage of nothing");
    for (i, (lo, hi)) in lower.iter().zip(upper).enumerate() {
        if lo > hi {
            return Err(Error::Config(format!(
                "interval {i} has lower {lo} > upper {hi}"
            )));
        }
    }
    let mut hit = 0usize;
    for (i, y) in y_true.iter().enumerate() {
        if lower[i] <= *y && *y <= upper[i] {
            hit += 1;
        }
    }
    Ok(hit as f64 / y_true.len() as f64)
}

pub fn mean_interval_length(lower: &[f64], upper: &[f64]) -> f64 {
    assert_eq!(lower.len(), upper.len(), "interval length: length mismatch");
    assert!(!lower.is_empty(), "interval length of nothing");
    lower
        .iter()
        .zip(upper)
        .map(|(lo, hi)| hi - lo)
        .sum::<f64>()
        / lower.len() as f64
}

/// Fraction of pairs where truth and prediction disagree about exceeding the
/// threshold (strict `>` on both sides).
pub fn misclassification_rate(y_true: &[f64], y_pred: &[f64], threshold: f64) -> f64 {
    assert_eq!(y_true.len(), y_pred.len(), "misclassification: length mismatch");
    assert!(!y_true.is_empty(), "misclassification of nothing");
    let wrong = y_true
        .iter()
        .zip(y_pred)
        .filter(|(t, p)| (**t > threshold) != (**p > threshold))
        .count();
    wrong as f64 / y_true.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmspe: f64,
    pub coverage: f64,
    pub mean_length: f64,
    pub misclass_rate: f64,
    /// Number of pooled test pairs behind the numbers above.
    pub n_eval: usize,
}

impl EvalReport {
    /// Score predictions with intervals against truth, classifying
    /// exceedance at `threshold` (conventionally [`FLOOD_THRESHOLD`]).
    pub fn from_predictions(
        y_true: &[f64],
        y_pred: &[f64],
        lower: &[f64],
        upper: &[f64],
        threshold: f64,
    ) -> Result<EvalReport> {
        Ok(EvalReport {
            rmspe: rmspe(y_true, y_pred),
            coverage: coverage(y_true, lower, upper)?,
            mean_length: mean_interval_length(lower, upper),
            misclass_rate: misclassification_rate(y_true, y_pred, threshold),
            n_eval: y_true.len(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("cannot serialize report: {e}")))
    }

    pub fn csv_header() -> &'static str {
        "rmspe,coverage,mean_length,misclass_rate,n_eval"
    }

    pub fn csv_row(&self) -> String {
        let mut row = String::new();
        let _ = write!(
            row,
            "{},{},{},{},{}",
            self.rmspe, self.coverage, self.mean_length, self.misclass_rate, self.n_eval
        );
        row
    }
}
