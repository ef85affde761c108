//! Combining the two LSTM models and merging the LSTM forecast with the five
//! medians.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::baselines::{median_combine, Forecast};
use crate::error::{Error, Result};
use crate::transform::log1p_invert;

/// Where the two LSTM predictions are averaged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AveragingSpace {
    /// Mean of the log1p predictions, then inverted.
    #[default]
    Log,
    /// Invert each prediction, then take the mean of the views.
    Views,
}

/// Averages the predictions of the model trained on the training window and
/// the model trained on the validation window. Inputs are log1p space; the
/// result is in views, clamped at 0.
pub fn average_lstm_pair(
    pred_train_model: &Array2<f64>,
    pred_validate_model: &Array2<f64>,
    space: AveragingSpace,
) -> Result<Array2<f64>> {
    if pred_train_model.dim() != pred_validate_model.dim() {
        return Err(Error::Shape(format!(
            "LSTM predictions differ in shape: {:?} vs {:?}",
            pred_train_model.dim(),
            pred_validate_model.dim()
        )));
    }
    Ok(match space {
        AveragingSpace::Log => {
            let mean = Zip::from(pred_train_model)
                .and(pred_validate_model)
                .map_collect(|a, b| 0.5 * (a + b));
            log1p_invert(&mean)
        }
        AveragingSpace::Views => {
            let a = log1p_invert(pred_train_model);
            let b = log1p_invert(pred_validate_model);
            Zip::from(&a).and(&b).map_collect(|a, b| 0.5 * (a + b))
        }
    })
}

/// The six candidates of the final model.
#[derive(Debug, Clone)]
pub struct EnsembleInputs {
    pub lstm: Forecast,
    /// Medians a–e.
    pub medians: [Forecast; 5],
}

impl EnsembleInputs {
    pub fn new(lstm: Forecast, medians: [Forecast; 5]) -> Result<Self> {
        for m in &medians {
            if !m.is_aligned_with(&lstm) {
                return Err(Error::Alignment(format!(
                    "median forecast {:?} is not aligned with the LSTM forecast",
                    m.label
                )));
            }
        }
        Ok(EnsembleInputs { lstm, medians })
    }

    pub fn candidates(&self) -> Vec<&Forecast> {
        std::iter::once(&self.lstm).chain(self.medians.iter()).collect()
    }
}

/// Cellwise median of the LSTM forecast and the five medians (mean of the
/// 3rd and 4th order statistics), clamped at 0.
pub fn final_forecast(inputs: &EnsembleInputs) -> Result<Forecast> {
    let combined = median_combine(&inputs.candidates())?;
    let values = combined.values().mapv(|v| v.max(0.0));
    Forecast::new(
        combined.pages().to_vec(),
        combined.dates().to_vec(),
        values,
        "final",
    )
}
