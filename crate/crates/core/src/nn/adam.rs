//! Adam with bias correction, one state per optimized network.

use super::{DenseNet, Gradients, NnError};

/// First/second moment estimates plus step counter for one [`DenseNet`].
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Gradients,
    v: Gradients,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(net: &DenseNet, lr: f64) -> Self {
        Self {
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

/// One Adam update: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
///
/// Rejects non-finite gradients without touching parameters or moments, so a
/// caller can abort cleanly with the last good parameters intact.
pub fn adam_step(
    net: &mut DenseNet,
    grads: &Gradients,
    state: &mut AdamState,
) -> Result<(), NnError> {
    if !grads.is_finite() {
        return Err(NnError::NonFiniteGradient {
            context: format!(
                "adam step {} on {:?} net",
                state.t + 1,
                net.layer_sizes()
            ),
        });
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    let (lr, b1, b2, eps) = (state.lr, state.beta1, state.beta2, state.epsilon);

    let update = |params: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..params.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    };

    for l in 0..net.weights.len() {
        update(
            &mut net.weights[l],
            &grads.weights[l],
            &mut state.m.weights[l],
            &mut state.v.weights[l],
        );
        update(
            &mut net.biases[l],
            &grads.biases[l],
            &mut state.m.biases[l],
            &mut state.v.biases[l],
        );
    }
    Ok(())
}
