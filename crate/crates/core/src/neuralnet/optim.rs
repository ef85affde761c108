use super::params::ModelParams;

/// RMSprop: `s ← ρ·s + (1−ρ)·g²`, `θ ← θ − lr·g / (√s + ε)`.
pub fn rmsprop_update(
    params: &mut [f64],
    grads: &[f64],
    state: &mut [f64],
    learning_rate: f64,
    rho: f64,
    epsilon: f64,
) {
    assert_eq!(params.len(), grads.len(), "gradient length mismatch");
    assert_eq!(params.len(), state.len(), "optimizer state length mismatch");
    for ((theta, g), s) in params.iter_mut().zip(grads).zip(state.iter_mut()) {
        *s = rho * *s + (1.0 - rho) * g * g;
        *theta -= learning_rate * g / (s.sqrt() + epsilon);
    }
}

/// RMSprop over every tensor of a [`ModelParams`].
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    /// Running mean of squared gradients, shaped like the model.
    pub state: ModelParams,
}

impl RmsProp {
    pub fn new(model: &ModelParams, learning_rate: f64, rho: f64, epsilon: f64) -> Self {
        RmsProp {
            learning_rate,
            rho,
            epsilon,
            state: model.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        let (lr, rho, eps) = (self.learning_rate, self.rho, self.epsilon);
        for (((_, p), (_, g)), (_, s)) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.state.tensors_mut())
        {
            rmsprop_update(p, g, s, lr, rho, eps);
        }
    }
}
