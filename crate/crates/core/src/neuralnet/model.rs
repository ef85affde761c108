//! Forward and backward passes.
//!
//! Cell equations, per timestep, gates in `i, f, g, o` order:
//!
//! ```text
//! z = x·W + h_prev·U + b
//! i = σ(z_i)  f = σ(z_f)  g = tanh(z_g)  o = σ(z_o)
//! c = f⊙c_prev + i⊙g
//! h = o⊙tanh(c)
//! ```
//!
//! Only the last hidden state feeds the dense head.

use ndarray::{s, Array2, Array3, ArrayView2, Axis, Zip};
use rand::Rng;

use super::params::{LstmParams, ModelParams};
use crate::error::{Error, Result};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Hidden and cell state, each `N × H`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Array2<f64>,
    pub c: Array2<f64>,
}

impl LstmState {
    pub fn zeros(n: usize, hidden: usize) -> Self {
        LstmState {
            h: Array2::zeros((n, hidden)),
            c: Array2::zeros((n, hidden)),
        }
    }
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    /// Activated gates, `N × 4H`.
    gates: Array2<f64>,
    tanh_c: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    steps: Vec<StepCache>,
    features: usize,
    hidden: usize,
}

impl LstmCache {
    pub fn batch_size(&self) -> usize {
        self.steps.first().map_or(0, |s| s.x.nrows())
    }

    pub fn timesteps(&self) -> usize {
        self.steps.len()
    }
}

/// Runs the LSTM over `x` (`N × T × F`) from `initial` (zeros when `None`)
/// and returns the final hidden state.
pub fn lstm_forward(
    params: &LstmParams,
    x: &Array3<f64>,
    initial: Option<&LstmState>,
) -> Result<(Array2<f64>, LstmCache)> {
    let (n, t, f) = x.dim();
    let hdim = params.hidden();
    if f != params.features() {
        return Err(Error::Shape(format!(
            "input has {f} features, LSTM expects {}",
            params.features()
        )));
    }
    if t == 0 {
        return Err(Error::Shape("input has no timesteps".into()));
    }
    let state = match initial {
        Some(s) => {
            if s.h.dim() != (n, hdim) || s.c.dim() != (n, hdim) {
                return Err(Error::Shape(format!(
                    "initial state must be {n}x{hdim}, got {:?}/{:?}",
                    s.h.dim(),
                    s.c.dim()
                )));
            }
            s.clone()
        }
        None => LstmState::zeros(n, hdim),
    };

    let (mut h, mut c) = (state.h, state.c);
    let mut steps = Vec::with_capacity(t);
    for step in 0..t {
        let xt = x.index_axis(Axis(1), step).to_owned();
        let mut gates = xt.dot(&params.w_input) + h.dot(&params.w_recurrent);
        gates += &params.bias;
        gates
            .slice_mut(s![.., 0..2 * hdim])
            .mapv_inplace(sigmoid);
        gates
            .slice_mut(s![.., 2 * hdim..3 * hdim])
            .mapv_inplace(f64::tanh);
        gates
            .slice_mut(s![.., 3 * hdim..])
            .mapv_inplace(sigmoid);

        let gi = gates.slice(s![.., 0..hdim]);
        let gf = gates.slice(s![.., hdim..2 * hdim]);
        let gg = gates.slice(s![.., 2 * hdim..3 * hdim]);
        let go = gates.slice(s![.., 3 * hdim..]);
        let mut c_new = Array2::<f64>::zeros((n, hdim));
        Zip::from(&mut c_new)
            .and(&gf)
            .and(&c)
            .and(&gi)
            .and(&gg)
            .for_each(|out, &f, &cp, &i, &g| *out = f * cp + i * g);
        let tanh_c = c_new.mapv(f64::tanh);
        let h_new = &go * &tanh_c;

        steps.push(StepCache {
            x: xt,
            h_prev: std::mem::replace(&mut h, h_new),
            c_prev: std::mem::replace(&mut c, c_new),
            gates,
            tanh_c,
        });
    }
    Ok((
        h,
        LstmCache {
            steps,
            features: f,
            hidden: hdim,
        },
    ))
}

/// Backpropagation through time from a gradient on the final hidden state.
/// Returns parameter gradients and the gradient on the initial state.
pub fn lstm_backward(
    params: &LstmParams,
    cache: &LstmCache,
    d_hidden: ArrayView2<'_, f64>,
) -> Result<(LstmParams, LstmState)> {
    let hdim = params.hidden();
    if cache.hidden != hdim || cache.features != params.features() {
        return Err(Error::Shape(format!(
            "cache was built for F={}, H={}; parameters are F={}, H={hdim}",
            cache.features,
            cache.hidden,
            params.features()
        )));
    }
    let n = cache.batch_size();
    if d_hidden.dim() != (n, hdim) {
        return Err(Error::Shape(format!(
            "hidden-state gradient is {:?}, cache expects {n}x{hdim}",
            d_hidden.dim()
        )));
    }

    let mut grads = LstmParams::zeros(params.features(), hdim);
    let mut dh = d_hidden.to_owned();
    let mut dc = Array2::<f64>::zeros((n, hdim));
    let mut dz = Array2::<f64>::zeros((n, 4 * hdim));

    for step in cache.steps.iter().rev() {
        let g = &step.gates;
        for r in 0..n {
            for k in 0..hdim {
                let i = g[[r, k]];
                let f = g[[r, hdim + k]];
                let gc = g[[r, 2 * hdim + k]];
                let o = g[[r, 3 * hdim + k]];
                let tc = step.tanh_c[[r, k]];
                let dh_rk = dh[[r, k]];
                let dc_rk = dc[[r, k]] + dh_rk * o * (1.0 - tc * tc);
                dz[[r, k]] = dc_rk * gc * i * (1.0 - i);
                dz[[r, hdim + k]] = dc_rk * step.c_prev[[r, k]] * f * (1.0 - f);
                dz[[r, 2 * hdim + k]] = dc_rk * i * (1.0 - gc * gc);
                dz[[r, 3 * hdim + k]] = dh_rk * tc * o * (1.0 - o);
                dc[[r, k]] = dc_rk * f;
            }
        }
        grads.w_input += &step.x.t().dot(&dz);
        grads.w_recurrent += &step.h_prev.t().dot(&dz);
        grads.bias += &dz.sum_axis(Axis(0));
        dh = dz.dot(&params.w_recurrent.t());
    }
    Ok((grads, LstmState { h: dh, c: dc }))
}

/// How dropout is applied between the LSTM output and the dense head.
pub enum Dropout<'a> {
    Off,
    /// Inverted dropout: zero each unit with probability `rate`, scale
    /// survivors by `1 / (1 - rate)`.
    Sample { rate: f64, rng: &'a mut dyn rand::RngCore },
    /// A precomputed mask (`N × H`, entries already scaled).
    Fixed(&'a Array2<f64>),
}

/// Draws an inverted-dropout mask.
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, hidden: usize, rate: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn((n, hidden), || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    lstm: LstmCache,
    mask: Option<Array2<f64>>,
    /// LSTM output after dropout.
    dropped: Array2<f64>,
}

impl ForwardCache {
    pub fn mask(&self) -> Option<&Array2<f64>> {
        self.mask.as_ref()
    }
}

/// Parameter gradients plus the gradient on the initial LSTM state.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: ModelParams,
    pub initial_state: LstmState,
}

impl ModelParams {
    /// `x` is `N × T × F`; returns `N × horizon` predictions.
    pub fn forward(
        &self,
        x: &Array3<f64>,
        initial: Option<&LstmState>,
        dropout: Dropout<'_>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        let (hidden, lstm_cache) = lstm_forward(&self.lstm, x, initial)?;
        let mask = match dropout {
            Dropout::Off => None,
            Dropout::Sample { rate: 0.0, .. } => None,
            Dropout::Sample { rate, rng } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
                }
                Some(dropout_mask(hidden.nrows(), hidden.ncols(), rate, rng))
            }
            Dropout::Fixed(mask) => {
                if mask.dim() != hidden.dim() {
                    return Err(Error::Shape(format!(
                        "dropout mask is {:?}, hidden state is {:?}",
                        mask.dim(),
                        hidden.dim()
                    )));
                }
                Some(mask.clone())
            }
        };
        let dropped = match &mask {
            Some(m) => &hidden * m,
            None => hidden,
        };
        let predictions = dropped.dot(&self.dense.weights) + &self.dense.bias;
        Ok((
            predictions,
            ForwardCache {
                lstm: lstm_cache,
                mask,
                dropped,
            },
        ))
    }

    /// Exact gradients given `dL/dpredictions`.
    pub fn backward(&self, cache: &ForwardCache, d_pred: &Array2<f64>) -> Result<Gradients> {
        let n = cache.dropped.nrows();
        if d_pred.dim() != (n, self.horizon()) || cache.dropped.ncols() != self.hidden() {
            return Err(Error::Shape(format!(
                "prediction gradient is {:?}; cache holds {n} rows of width {}, model expects horizon {}",
                d_pred.dim(),
                cache.dropped.ncols(),
                self.horizon()
            )));
        }
        let d_weights = cache.dropped.t().dot(d_pred);
        let d_bias = d_pred.sum_axis(Axis(0));
        let mut d_hidden = d_pred.dot(&self.dense.weights.t());
        if let Some(mask) = &cache.mask {
            d_hidden *= mask;
        }
        let (lstm, initial_state) = lstm_backward(&self.lstm, &cache.lstm, d_hidden.view())?;
        Ok(Gradients {
            params: ModelParams {
                lstm,
                dense: super::params::DenseParams {
                    weights: d_weights,
                    bias: d_bias,
                },
            },
            initial_state,
        })
    }

    /// Deterministic, dropout-free predictions for a 2-D feature matrix
    /// (one timestep per row), evaluated in row chunks.
    pub fn predict_matrix(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        const CHUNK: usize = 4096;
        if x.ncols() != self.features() {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.ncols(),
                self.features()
            )));
        }
        let mut out = Array2::<f64>::zeros((x.nrows(), self.horizon()));
        for start in (0..x.nrows()).step_by(CHUNK) {
            let end = (start + CHUNK).min(x.nrows());
            let batch = as_sequence(x.slice(s![start..end, ..]));
            let (pred, _) = self.forward(&batch, None, Dropout::Off)?;
            out.slice_mut(s![start..end, ..]).assign(&pred);
        }
        Ok(out)
    }
}

/// Reshapes `N × F` rows into `N × 1 × F` single-timestep sequences.
pub fn as_sequence(x: ArrayView2<'_, f64>) -> Array3<f64> {
    x.to_owned().insert_axis(Axis(1))
}

/// MAE value and its subgradient (0 where the residual is exactly 0).
pub fn mae_loss(pred: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    let value = crate::metrics::mae(target, pred)?.value;
    let scale = 1.0 / pred.len() as f64;
    let grad = Zip::from(pred)
        .and(target)
        .map_collect(|p, y| {
            let r = p - y;
            if r > 0.0 {
                scale
            } else if r < 0.0 {
                -scale
            } else {
                0.0
            }
        });
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::params::init_params;
    use ndarray::Array1;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar-loop LSTM step, written directly from the cell equations.
    fn scalar_step(
        p: &LstmParams,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let hd = p.hidden();
        let pre = |gate: usize, k: usize| {
            let col = gate * hd + k;
            let mut z = p.bias[col];
            for (j, xj) in x.iter().enumerate() {
                z += xj * p.w_input[[j, col]];
            }
            for (j, hj) in h_prev.iter().enumerate() {
                z += hj * p.w_recurrent[[j, col]];
            }
            z
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        for k in 0..hd {
            let i = sig(pre(0, k));
            let f = sig(pre(1, k));
            let g = pre(2, k).tanh();
            let o = sig(pre(3, k));
            c[k] = f * c_prev[k] + i * g;
            h[k] = o * c[k].tanh();
        }
        (h, c)
    }

    #[test]
    fn zero_weights_give_zero_hidden() {
        let p = LstmParams::zeros(3, 2);
        let x = Array3::from_elem((2, 1, 3), 0.7);
        let (h, _) = lstm_forward(&p, &x, None).unwrap();
        assert!(h.iter().all(|v| *v == 0.0));

        let mut p = LstmParams::zeros(3, 2);
        p.bias.slice_mut(s![2..4]).fill(1.0);
        let (h, _) = lstm_forward(&p, &Array3::zeros((2, 1, 3)), None).unwrap();
        assert!(h.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = init_params(3, 2, 1, &mut rng).lstm;
        p.bias.mapv_inplace(|_| rng.random::<f64>() - 0.5);
        let x = Array3::from_shape_simple_fn((2, 3, 3), || rng.random::<f64>() * 2.0 - 1.0);
        let init = LstmState {
            h: Array2::from_shape_simple_fn((2, 2), || rng.random::<f64>() - 0.5),
            c: Array2::from_shape_simple_fn((2, 2), || rng.random::<f64>() - 0.5),
        };
        let (h, _) = lstm_forward(&p, &x, Some(&init)).unwrap();
        for r in 0..2 {
            let mut hs = init.h.row(r).to_vec();
            let mut cs = init.c.row(r).to_vec();
            for t in 0..3 {
                let xt: Vec<f64> = x.slice(s![r, t, ..]).to_vec();
                (hs, cs) = scalar_step(&p, &xt, &hs, &cs);
            }
            for k in 0..2 {
                assert!((h[[r, k]] - hs[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let p = init_params(3, 2, 2, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(p.forward(&Array3::zeros((2, 1, 4)), None, Dropout::Off).is_err());
        let (_, cache) = p.forward(&Array3::zeros((2, 1, 3)), None, Dropout::Off).unwrap();
        assert!(p.backward(&cache, &Array2::zeros((3, 2))).is_err());
        let other = init_params(3, 5, 2, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(other.backward(&cache, &Array2::zeros((2, 2))).is_err());
        assert!(p.predict_matrix(&Array2::zeros((1, 2))).is_err());
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = init_params(4, 8, 3, &mut rng);
        let x = Array3::from_shape_simple_fn((6, 1, 4), || rng.random::<f64>());
        let (off, _) = p.forward(&x, None, Dropout::Off).unwrap();
        let (zero, _) = p
            .forward(&x, None, Dropout::Sample { rate: 0.0, rng: &mut rng })
            .unwrap();
        assert_eq!(off, zero);
        let (on, cache) = p
            .forward(&x, None, Dropout::Sample { rate: 0.3, rng: &mut rng })
            .unwrap();
        assert_ne!(on, off);
        let mask = cache.mask().unwrap();
        assert!(mask.iter().all(|m| *m == 0.0 || (*m - 1.0 / 0.7).abs() < 1e-15));
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = Array1::from(vec![0.5, -1.2, 2.0, 0.8]);
        let draws = 10_000;
        let mut acc = Array1::<f64>::zeros(4);
        for _ in 0..draws {
            let m = dropout_mask(1, 4, 0.3, &mut rng);
            acc += &(&h * &m.row(0));
        }
        acc /= draws as f64;
        for (mean, target) in acc.iter().zip(h.iter()) {
            assert!((mean - target).abs() <= 0.02 * target.abs(), "{mean} vs {target}");
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = init_params(3, 4, 2, &mut rng);
        let x = Array3::from_shape_simple_fn((5, 1, 3), || rng.random::<f64>());
        let (_, cache) = p.forward(&x, None, Dropout::Off).unwrap();
        let g = p.backward(&cache, &Array2::zeros((5, 2))).unwrap();
        assert!(g.params.tensors().iter().all(|(_, t)| t.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn masked_unit_gets_no_dense_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = init_params(3, 4, 2, &mut rng);
        let x = Array3::from_shape_simple_fn((5, 1, 3), || rng.random::<f64>());
        let mut mask = Array2::from_elem((5, 4), 1.0 / 0.7);
        mask.column_mut(2).fill(0.0);
        let (_, cache) = p.forward(&x, None, Dropout::Fixed(&mask)).unwrap();
        let g = p.backward(&cache, &Array2::from_elem((5, 2), 0.1)).unwrap();
        assert!(g.params.dense.weights.row(2).iter().all(|v| *v == 0.0));
        assert!(g.params.dense.weights.row(1).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn mae_loss_matches_metric() {
        let pred = ndarray::array![[1.0, 2.0], [3.0, 4.0]];
        let y = ndarray::array![[1.5, 2.0], [2.0, 6.0]];
        let (v, g) = mae_loss(&pred, &y).unwrap();
        assert_eq!(v, crate::metrics::mae(&y, &pred).unwrap().value);
        assert_eq!(g, ndarray::array![[-0.25, 0.0], [0.25, -0.25]]);
    }
}
