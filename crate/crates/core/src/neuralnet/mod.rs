//! A single-layer LSTM regressor written from scratch: forward pass,
//! backpropagation through time, inverted dropout, MAE loss, RMSprop and an
//! epoch loop that keeps the best-on-validation parameters.

mod checkpoint;
mod gradcheck;
mod model;
mod optim;
mod params;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{
    gradient_check, gradient_check_with, tiny_problem, GradCheckReport, GradCheckSample,
};
pub use model::{
    as_sequence, dropout_mask, lstm_backward, lstm_forward, mae_loss, Dropout, ForwardCache,
    Gradients, LstmCache, LstmState,
};
pub use optim::{rmsprop_update, RmsProp};
pub use params::{init_params, DenseParams, Gate, LstmParams, ModelParams};
pub use train::{holdout_tail, train, EpochRecord, TrainHistory, TrainOutcome};

/// Hyperparameters for [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub dropout: f64,
    /// Rows per minibatch; 0 means full batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub hidden_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            dropout: 0.3,
            batch_size: 32,
            learning_rate: 1e-3,
            rho: 0.9,
            epsilon: 1e-7,
            seed: 0,
            hidden_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} must lie in [0, 1)",
                self.dropout
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.rho) || !(self.epsilon > 0.0) {
            return Err(Error::Config("rho must lie in [0, 1) and epsilon be positive".into()));
        }
        if self.hidden_size == 0 {
            return Err(Error::Config("hidden size must be positive".into()));
        }
        Ok(())
    }
}
