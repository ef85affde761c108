//! SMAPE and MAE over flattened pages × horizon grids.
//!
//! Scores are reported in percentage points for SMAPE (`43.59`, not
//! `0.4359`). Terms where both the true and predicted value are zero
//! contribute exactly 0.

use std::fmt;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::compensated_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Smape,
    Mae,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Smape => "smape",
            Metric::Mae => "mae",
        }
    }

    /// The per-term error before averaging.
    pub fn term(self, y: f64, y_hat: f64) -> f64 {
        match self {
            Metric::Smape => smape_term(y, y_hat),
            Metric::Mae => (y - y_hat).abs(),
        }
    }

    pub fn score(self, y_true: &Array2<f64>, y_pred: &Array2<f64>) -> Result<ScoreReport> {
        score(self, y_true.view(), y_pred.view(), false)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub metric: Metric,
    pub value: f64,
    pub n: usize,
    /// Row-wise scores, when requested.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_page: Option<Vec<f64>>,
}

impl ScoreReport {
    /// `metric,value,n,timestamp` without a trailing newline.
    pub fn to_csv_line(&self, timestamp: &str) -> String {
        format!("{},{},{},{}", self.metric, self.value, self.n, timestamp)
    }

    /// One-line JSON object with the same four fields.
    pub fn to_json_line(&self, timestamp: &str) -> String {
        serde_json::json!({
            "metric": self.metric,
            "value": self.value,
            "n": self.n,
            "timestamp": timestamp,
        })
        .to_string()
    }
}

/// `200 |y - ŷ| / (|y| + |ŷ|)`, or 0 when both are zero.
#[inline]
pub fn smape_term(y: f64, y_hat: f64) -> f64 {
    let denom = y.abs() + y_hat.abs();
    if denom == 0.0 {
        0.0
    } else {
        // The ratio is at most 1 in floating point too, so the term never
        // exceeds 200.
        200.0 * ((y - y_hat).abs() / denom)
    }
}

pub fn smape(y_true: &Array2<f64>, y_pred: &Array2<f64>) -> Result<ScoreReport> {
    score(Metric::Smape, y_true.view(), y_pred.view(), false)
}

pub fn mae(y_true: &Array2<f64>, y_pred: &Array2<f64>) -> Result<ScoreReport> {
    score(Metric::Mae, y_true.view(), y_pred.view(), false)
}

/// Like [`smape`]/[`mae`] but also fills [`ScoreReport::per_page`].
pub fn score_per_page(
    metric: Metric,
    y_true: &Array2<f64>,
    y_pred: &Array2<f64>,
) -> Result<ScoreReport> {
    score(metric, y_true.view(), y_pred.view(), true)
}

pub fn score(
    metric: Metric,
    y_true: ArrayView2<'_, f64>,
    y_pred: ArrayView2<'_, f64>,
    per_page: bool,
) -> Result<ScoreReport> {
    if y_true.shape() != y_pred.shape() {
        return Err(Error::Shape(format!(
            "truth is {:?}, prediction is {:?}",
            y_true.shape(),
            y_pred.shape()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Shape("cannot score an empty grid".into()));
    }
    let bad = Zip::indexed(&y_true)
        .and(&y_pred)
        .fold(None, |acc, idx, a, b| {
            acc.or_else(|| (!a.is_finite() || !b.is_finite()).then_some(idx))
        });
    if let Some((r, c)) = bad {
        return Err(Error::Domain(format!(
            "non-finite value at row {r}, column {c}"
        )));
    }

    let n = y_true.len();
    let value = compensated_sum(
        y_true
            .iter()
            .zip(y_pred.iter())
            .map(|(y, p)| metric.term(*y, *p)),
    ) / n as f64;

    let per_page = per_page.then(|| {
        y_true
            .rows()
            .into_iter()
            .zip(y_pred.rows())
            .map(|(y, p)| {
                compensated_sum(y.iter().zip(p.iter()).map(|(y, p)| metric.term(*y, *p)))
                    / y.len().max(1) as f64
            })
            .collect()
    });

    Ok(ScoreReport {
        metric,
        value,
        n,
        per_page,
    })
}
