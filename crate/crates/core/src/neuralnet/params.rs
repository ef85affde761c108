use ndarray::{s, Array1, Array2, ArrayView2};
use rand::distr::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};

/// Gate order inside the concatenated weight matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Cell = 2,
    Output = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Cell, Gate::Output];
}

/// LSTM weights for the four gates, stored side by side: column block
/// `k*H..(k+1)*H` belongs to gate `k` in [`Gate`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `F × 4H`
    pub w_input: Array2<f64>,
    /// `H × 4H`
    pub w_recurrent: Array2<f64>,
    /// `4H`
    pub bias: Array1<f64>,
}

impl LstmParams {
    pub fn zeros(features: usize, hidden: usize) -> Self {
        LstmParams {
            w_input: Array2::zeros((features, 4 * hidden)),
            w_recurrent: Array2::zeros((hidden, 4 * hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn features(&self) -> usize {
        self.w_input.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w_recurrent.nrows()
    }

    /// `F × H` input weights of one gate.
    pub fn input_gate(&self, gate: Gate) -> ArrayView2<'_, f64> {
        let h = self.hidden();
        let k = gate as usize;
        self.w_input.slice(s![.., k * h..(k + 1) * h])
    }

    /// `H × H` recurrent weights of one gate.
    pub fn recurrent_gate(&self, gate: Gate) -> ArrayView2<'_, f64> {
        let h = self.hidden();
        let k = gate as usize;
        self.w_recurrent.slice(s![.., k * h..(k + 1) * h])
    }

    pub fn gate_bias(&self, gate: Gate) -> ndarray::ArrayView1<'_, f64> {
        let h = self.hidden();
        let k = gate as usize;
        self.bias.slice(s![k * h..(k + 1) * h])
    }

    pub fn param_count(&self) -> usize {
        self.w_input.len() + self.w_recurrent.len() + self.bias.len()
    }

    fn check(&self) -> Result<()> {
        let h = self.hidden();
        if self.w_input.ncols() != 4 * h
            || self.w_recurrent.ncols() != 4 * h
            || self.bias.len() != 4 * h
        {
            return Err(Error::Shape(format!(
                "inconsistent LSTM shapes: input {:?}, recurrent {:?}, bias {}",
                self.w_input.dim(),
                self.w_recurrent.dim(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

/// Linear output head.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `H × horizon`
    pub weights: Array2<f64>,
    /// `horizon`
    pub bias: Array1<f64>,
}

impl DenseParams {
    pub fn zeros(hidden: usize, horizon: usize) -> Self {
        DenseParams {
            weights: Array2::zeros((hidden, horizon)),
            bias: Array1::zeros(horizon),
        }
    }

    pub fn horizon(&self) -> usize {
        self.bias.len()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// The full network: one LSTM layer followed by a dense head. Gradients and
/// optimizer accumulators reuse this type, since they share its shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub lstm: LstmParams,
    pub dense: DenseParams,
}

pub(crate) const TENSOR_NAMES: [&str; 5] = [
    "lstm.w_input",
    "lstm.w_recurrent",
    "lstm.bias",
    "dense.weights",
    "dense.bias",
];

impl ModelParams {
    pub fn zeros(features: usize, hidden: usize, horizon: usize) -> Self {
        ModelParams {
            lstm: LstmParams::zeros(features, hidden),
            dense: DenseParams::zeros(hidden, horizon),
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.features(), self.hidden(), self.horizon())
    }

    pub fn features(&self) -> usize {
        self.lstm.features()
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden()
    }

    pub fn horizon(&self) -> usize {
        self.dense.horizon()
    }

    pub fn param_count(&self) -> usize {
        self.lstm.param_count() + self.dense.param_count()
    }

    pub fn check(&self) -> Result<()> {
        self.lstm.check()?;
        if self.dense.weights.nrows() != self.hidden()
            || self.dense.weights.ncols() != self.dense.bias.len()
        {
            return Err(Error::Shape(format!(
                "dense head {:?} does not fit hidden size {} / bias {}",
                self.dense.weights.dim(),
                self.hidden(),
                self.dense.bias.len()
            )));
        }
        Ok(())
    }

    /// Flat views of every tensor, in a fixed order.
    pub fn tensors(&self) -> [(&'static str, &[f64]); 5] {
        fn slice(a: Option<&[f64]>) -> &[f64] {
            a.expect("parameters are contiguous")
        }
        [
            (TENSOR_NAMES[0], slice(self.lstm.w_input.as_slice())),
            (TENSOR_NAMES[1], slice(self.lstm.w_recurrent.as_slice())),
            (TENSOR_NAMES[2], slice(self.lstm.bias.as_slice())),
            (TENSOR_NAMES[3], slice(self.dense.weights.as_slice())),
            (TENSOR_NAMES[4], slice(self.dense.bias.as_slice())),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 5] {
        fn slice(a: Option<&mut [f64]>) -> &mut [f64] {
            a.expect("parameters are contiguous")
        }
        [
            (TENSOR_NAMES[0], slice(self.lstm.w_input.as_slice_mut())),
            (TENSOR_NAMES[1], slice(self.lstm.w_recurrent.as_slice_mut())),
            (TENSOR_NAMES[2], slice(self.lstm.bias.as_slice_mut())),
            (TENSOR_NAMES[3], slice(self.dense.weights.as_slice_mut())),
            (TENSOR_NAMES[4], slice(self.dense.bias.as_slice_mut())),
        ]
    }

    /// Tensor shapes in [`ModelParams::tensors`] order.
    pub fn shapes(&self) -> [Vec<usize>; 5] {
        [
            self.lstm.w_input.shape().to_vec(),
            self.lstm.w_recurrent.shape().to_vec(),
            self.lstm.bias.shape().to_vec(),
            self.dense.weights.shape().to_vec(),
            self.dense.bias.shape().to_vec(),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Glorot-uniform weights (fans taken per gate), forget-gate bias 1, all
/// other biases 0.
pub fn init_params<R: Rng + ?Sized>(
    features: usize,
    hidden: usize,
    horizon: usize,
    rng: &mut R,
) -> ModelParams {
    fn glorot<R: Rng + ?Sized>(shape: (usize, usize), fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        Array2::from_shape_simple_fn(shape, || dist.sample(rng))
    }

    let mut params = ModelParams::zeros(features, hidden, horizon);
    params.lstm.w_input = glorot((features, 4 * hidden), features, hidden, rng);
    params.lstm.w_recurrent = glorot((hidden, 4 * hidden), hidden, hidden, rng);
    params
        .lstm
        .bias
        .slice_mut(s![hidden..2 * hidden])
        .fill(1.0);
    params.dense.weights = glorot((hidden, horizon), hidden, horizon, rng);
    params
}
