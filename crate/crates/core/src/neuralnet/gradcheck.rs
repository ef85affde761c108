//! Central finite-difference verification of [`ModelParams::backward`].

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{mae_loss, Dropout, Gradients, LstmState};
use super::params::{init_params, ModelParams};
use crate::error::Result;

const STEP: f64 = 1e-5;
/// Denominator floor, so parameters with (near-)zero gradient compare on an
/// absolute scale.
const FLOOR: f64 = 1e-6;

/// Inputs held fixed while differencing.
#[derive(Debug, Clone)]
pub struct GradCheckSample {
    /// `N × T × F`
    pub x: Array3<f64>,
    /// `N × horizon`
    pub y: Array2<f64>,
    pub initial_state: Option<LstmState>,
    /// Held constant across every perturbed forward pass.
    pub dropout_mask: Option<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `tensor[index]` of the worst parameter.
    pub worst: String,
    pub checked: usize,
}

fn loss(params: &ModelParams, sample: &GradCheckSample) -> Result<f64> {
    let dropout = match &sample.dropout_mask {
        Some(m) => Dropout::Fixed(m),
        None => Dropout::Off,
    };
    let (pred, _) = params.forward(&sample.x, sample.initial_state.as_ref(), dropout)?;
    Ok(mae_loss(&pred, &sample.y)?.0)
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

pub fn gradient_check(params: &ModelParams, sample: &GradCheckSample) -> Result<GradCheckReport> {
    gradient_check_with(params, sample, |_| {})
}

/// Like [`gradient_check`], but lets `tamper` modify the analytic gradients
/// before comparison (fault injection).
pub fn gradient_check_with(
    params: &ModelParams,
    sample: &GradCheckSample,
    tamper: impl FnOnce(&mut Gradients),
) -> Result<GradCheckReport> {
    let dropout = match &sample.dropout_mask {
        Some(m) => Dropout::Fixed(m),
        None => Dropout::Off,
    };
    let (pred, cache) = params.forward(&sample.x, sample.initial_state.as_ref(), dropout)?;
    let (_, d_pred) = mae_loss(&pred, &sample.y)?;
    let mut grads = params.backward(&cache, &d_pred)?;
    tamper(&mut grads);

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let analytic = grads.params.tensors();
    for (t, (name, _)) in params.tensors().iter().enumerate() {
        for i in 0..analytic[t].1.len() {
            let original = probe.tensors()[t].1[i];
            probe.tensors_mut()[t].1[i] = original + STEP;
            let up = loss(&probe, sample)?;
            probe.tensors_mut()[t].1[i] = original - STEP;
            let down = loss(&probe, sample)?;
            probe.tensors_mut()[t].1[i] = original;

            let numeric = (up - down) / (2.0 * STEP);
            let err = relative_error(analytic[t].1[i], numeric);
            if report.worst.is_empty() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = format!("{name}[{i}]");
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// A small random model and sample: `N × 1 × F` input, nonzero initial state
/// (so the recurrent weights receive gradient) and an optional fixed dropout
/// mask.
pub fn tiny_problem(
    n: usize,
    features: usize,
    hidden: usize,
    horizon: usize,
    dropout: f64,
    seed: u64,
) -> (ModelParams, GradCheckSample) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_params(features, hidden, horizon, &mut rng);
    for v in params.lstm.bias.iter_mut() {
        *v += rng.random::<f64>() * 0.2 - 0.1;
    }
    for v in params.dense.bias.iter_mut() {
        *v = rng.random::<f64>() * 0.2 - 0.1;
    }
    let mut uniform = |shape: (usize, usize), scale: f64| {
        Array2::from_shape_simple_fn(shape, || (rng.random::<f64>() * 2.0 - 1.0) * scale)
    };
    let x = uniform((n, features), 1.0).insert_axis(ndarray::Axis(1));
    // Targets well away from the predictions keep every residual clear of
    // the |r| kink.
    let y = uniform((n, horizon), 1.0).mapv(|v| v + 3.0 * v.signum());
    let initial_state = Some(LstmState {
        h: uniform((n, hidden), 0.5),
        c: uniform((n, hidden), 0.5),
    });
    let dropout_mask = (dropout > 0.0).then(|| {
        super::model::dropout_mask(n, hidden, dropout, &mut rng)
    });
    (
        params,
        GradCheckSample {
            x,
            y,
            initial_state,
            dropout_mask,
        },
    )
}
