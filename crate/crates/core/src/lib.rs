//! Multistep forecasting for large panels of daily web-traffic series.
//!
//! The crate provides the building blocks of a forecasting pipeline for
//! Wikipedia page views:
//!
//! * [`data`]: loading wide `Page,YYYY-MM-DD,...` CSV panels and answer keys.
//! * [`transform`]: zero-fill, log1p, IQR clipping, train/validate/test
//!   windows and min-max scaling.
//! * [`metrics`]: SMAPE and MAE.
//! * [`baselines`]: the 60-day median benchmark and weekday medians.
//! * [`neuralnet`]: an LSTM regressor trained with RMSprop.
//! * [`ensemble`]: averaging the two LSTMs and the final median combine.

pub mod baselines;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod metrics;
pub mod neuralnet;
pub mod stats;
pub mod transform;

pub use baselines::Forecast;
pub use data::{PageKey, SeriesTable};
pub use error::{Error, Result};
pub use metrics::{Metric, ScoreReport};
