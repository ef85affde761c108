use log::info;
use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::model::{as_sequence, mae_loss, Dropout};
use super::optim::RmsProp;
use super::params::init_params;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::metrics;
use crate::stats::compensated_sum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Size-weighted mean of the minibatch losses (dropout active).
    pub train_loss: f64,
    /// Dropout-free MAE on the validation rows.
    pub val_loss: f64,
    pub best_val_loss: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Dropout-free training MAE of the freshly initialised model.
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// `epoch,train_loss,val_loss,best_val_loss` rows with an epoch-0 row for
    /// the untrained model.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,best_val_loss\n");
        out.push_str(&format!(
            "0,{},{},{}\n",
            self.initial_train_loss, self.initial_val_loss, self.initial_val_loss
        ));
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.best_val_loss
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
}

fn check_pair(x: &Array2<f64>, y: &Array2<f64>, what: &str) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(Error::Shape(format!(
            "{what}: {} input rows but {} target rows",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::Shape(format!("{what}: no rows")));
    }
    Ok(())
}

/// Trains on `(x_train, y_train)` and keeps the parameters with the lowest
/// validation MAE seen after any epoch.
///
/// Inputs are `rows × features`, one timestep per row. The same seeded
/// generator drives initialisation, shuffling and dropout, so a fixed config
/// reproduces the run bit for bit.
pub fn train(
    x_train: &Array2<f64>,
    y_train: &Array2<f64>,
    x_val: &Array2<f64>,
    y_val: &Array2<f64>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    for (m, what) in [(x_train, "X_train"), (y_train, "y_train"), (x_val, "X_val"), (y_val, "y_val")] {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("{what} contains non-finite values")));
        }
    }
    check_pair(x_train, y_train, "training set")?;
    check_pair(x_val, y_val, "validation set")?;
    if x_val.ncols() != x_train.ncols() || y_val.ncols() != y_train.ncols() {
        return Err(Error::Shape(format!(
            "validation set is {}→{} columns, training set {}→{}",
            x_val.ncols(),
            y_val.ncols(),
            x_train.ncols(),
            y_train.ncols()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init_params(x_train.ncols(), config.hidden_size, y_train.ncols(), &mut rng);
    let mut optimizer = RmsProp::new(&params, config.learning_rate, config.rho, config.epsilon);

    let evaluate = |p: &super::params::ModelParams, x: &Array2<f64>, y: &Array2<f64>| -> Result<f64> {
        Ok(metrics::mae(y, &p.predict_matrix(x)?)?.value)
    };
    let initial_train_loss = evaluate(&params, x_train, y_train)?;
    let initial_val_loss = evaluate(&params, x_val, y_val)?;
    info!("epoch 0: train_loss={initial_train_loss:.6} val_loss={initial_val_loss:.6}");

    let n = x_train.nrows();
    let batch = if config.batch_size == 0 { n } else { config.batch_size.min(n) };
    let mut order: Vec<usize> = (0..n).collect();
    let mut best: Option<Checkpoint> = None;
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut weighted = Vec::with_capacity(n.div_ceil(batch));
        for (b, idx) in order.chunks(batch).enumerate() {
            let xb = as_sequence(x_train.select(Axis(0), idx).view());
            let yb = y_train.select(Axis(0), idx);
            let (pred, cache) = params.forward(
                &xb,
                None,
                Dropout::Sample {
                    rate: config.dropout,
                    rng: &mut rng,
                },
            )?;
            let (loss, d_pred) = mae_loss(&pred, &yb).map_err(|_| Error::NonFiniteLoss {
                epoch,
                batch: b,
                value: f64::NAN,
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b, value: loss });
            }
            let grads = params.backward(&cache, &d_pred)?;
            optimizer.step(&mut params, &grads.params);
            weighted.push(loss * idx.len() as f64);
        }
        if !params.all_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: weighted.len(),
                value: f64::NAN,
            });
        }
        let train_loss = compensated_sum(weighted) / n as f64;
        let val_loss = evaluate(&params, x_val, y_val)
            .map_err(|_| Error::NonFiniteLoss { epoch, batch: 0, value: f64::NAN })?;

        let improved = best.as_ref().is_none_or(|b| val_loss < b.val_loss);
        if improved {
            best = Some(Checkpoint {
                params: params.clone(),
                config: config.clone(),
                epoch,
                val_loss,
                scaler_sidecar: None,
                optimizer_state: Some(optimizer.state.clone()),
            });
        }
        let best_val_loss = best.as_ref().map_or(val_loss, |b| b.val_loss);
        info!(
            "epoch {epoch}/{}: train_loss={train_loss:.6} val_loss={val_loss:.6} best={best_val_loss:.6}{}",
            config.epochs,
            if improved { " *" } else { "" }
        );
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            best_val_loss,
            improved,
        });
    }

    Ok(TrainOutcome {
        checkpoint: best.expect("at least one epoch"),
        history: TrainHistory {
            initial_train_loss,
            initial_val_loss,
            epochs: records,
        },
    })
}

/// `(x_fit, y_fit, x_held, y_held)`.
pub type Holdout = (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>);

/// Splits rows into a fitting part and the trailing `fraction` (at least one
/// row) held out for validation, in stored order.
pub fn holdout_tail(
    x: &Array2<f64>,
    y: &Array2<f64>,
    fraction: f64,
) -> Result<Holdout> {
    check_pair(x, y, "holdout")?;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("holdout fraction {fraction} must lie in (0, 1)")));
    }
    let n = x.nrows();
    let held = ((n as f64 * fraction).ceil() as usize).max(1);
    if held >= n {
        return Err(Error::Shape(format!("cannot hold out {held} of {n} rows")));
    }
    let cut = n - held;
    Ok((
        x.slice(s![..cut, ..]).to_owned(),
        y.slice(s![..cut, ..]).to_owned(),
        x.slice(s![cut.., ..]).to_owned(),
        y.slice(s![cut.., ..]).to_owned(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy(n: usize, f: usize, h: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((n, f), || rng.random::<f64>());
        let y = Array2::from_shape_fn((n, h), |(i, j)| 1.0 + x[[i, j % f]] * 2.0);
        (x, y)
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            hidden_size: 8,
            batch_size: 16,
            epochs: 3,
            seed: 7,
            learning_rate: 1e-2,
            ..Default::default()
        }
    }

    #[test]
    fn single_epoch_checkpoint_is_epoch_one() {
        let (x, y) = toy(40, 5, 3, 1);
        let cfg = TrainConfig { epochs: 1, ..small_config() };
        let out = train(&x, &y, &x, &y, &cfg).unwrap();
        assert_eq!(out.checkpoint.epoch, 1);
        assert_eq!(out.history.epochs.len(), 1);
        assert_eq!(out.checkpoint.val_loss, out.history.epochs[0].val_loss);
    }

    #[test]
    fn checkpoint_is_best_and_reproducible() {
        let (x, y) = toy(64, 5, 3, 2);
        let (xv, yv) = toy(16, 5, 3, 3);
        let cfg = TrainConfig { epochs: 6, ..small_config() };
        let a = train(&x, &y, &xv, &yv, &cfg).unwrap();
        for r in &a.history.epochs {
            assert!(a.checkpoint.val_loss <= r.val_loss);
        }
        let re = a.checkpoint.evaluate(&xv, &yv).unwrap();
        assert!((re - a.checkpoint.val_loss).abs() <= 1e-9);

        let b = train(&x, &y, &xv, &yv, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.checkpoint.params, b.checkpoint.params);
    }

    #[test]
    fn training_reduces_loss() {
        let (x, y) = toy(128, 6, 4, 4);
        let cfg = TrainConfig { epochs: 10, ..small_config() };
        let out = train(&x, &y, &x, &y, &cfg).unwrap();
        let last = out.history.epochs.last().unwrap();
        assert!(last.val_loss < 0.7 * out.history.initial_val_loss);
    }

    #[test]
    fn full_batch_mode() {
        let (x, y) = toy(20, 3, 2, 5);
        let cfg = TrainConfig { batch_size: 0, epochs: 2, ..small_config() };
        assert!(train(&x, &y, &x, &y, &cfg).is_ok());
    }

    #[test]
    fn diverging_run_names_epoch_and_batch() {
        let (x, mut y) = toy(20, 3, 2, 5);
        y[[3, 0]] = f64::INFINITY;
        let cfg = TrainConfig { epochs: 1, ..small_config() };
        let err = train(&x, &y, &x, &y, &cfg).unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "{err}");
        let (x, y) = toy(20, 3, 2, 5);
        let cfg = TrainConfig { learning_rate: 1e308, epochs: 2, ..small_config() };
        let err = train(&x, &y, &x, &y, &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 1, .. }), "{err}");
    }

    #[test]
    fn rejects_mismatched_rows() {
        let (x, y) = toy(20, 3, 2, 5);
        let y_short = y.slice(s![..10, ..]).to_owned();
        assert!(matches!(train(&x, &y_short, &x, &y, &small_config()), Err(Error::Shape(_))));
    }

    #[test]
    fn holdout_takes_last_rows() {
        let x = Array2::from_shape_fn((100, 2), |(i, _)| i as f64);
        let y = x.clone();
        let (xf, _, xh, yh) = holdout_tail(&x, &y, 0.05).unwrap();
        assert_eq!(xf.nrows(), 95);
        assert_eq!(xh.nrows(), 5);
        assert_eq!(xh[[0, 0]], 95.0);
        assert_eq!(yh[[4, 0]], 99.0);
        let (_, _, xh, _) = holdout_tail(&x.slice(s![..3, ..]).to_owned(), &y.slice(s![..3, ..]).to_owned(), 0.05).unwrap();
        assert_eq!(xh.nrows(), 1);
    }
}
