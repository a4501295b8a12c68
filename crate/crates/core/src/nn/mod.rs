//! Minimal dense-network engine with exact analytic gradients.
//!
//! A [`DenseNet`] is a stack of affine layers with an element-wise activation:
//! `a_{l+1} = act(W_l a_l + b_l)`. Hidden layers share one activation, the
//! output layer has its own. All arithmetic is `f64`.
//!
//! Gradients are computed by hand-rolled reverse passes; every loss in this
//! crate is a fixed composition of forward passes, so no general tape is
//! needed. Shape mismatches are programmer error and panic via `assert!`.

mod adam;
mod policy;

pub use adam::{adam_step, AdamState};
pub use policy::{
    ln_one_minus_tanh_sq, softplus, PolicyHead, PolicySample, SquashedGaussianPolicy, LOG_STD_MAX,
    LOG_STD_MIN,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Element-wise activation functions supported by [`DenseNet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y = act(x)`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Errors surfaced by the network engine.
#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("non-finite gradient in {context}; optimizer step rejected")]
    NonFiniteGradient { context: String },
}

/// A fully-connected network. Weight matrix `l` is row-major with shape
/// `layer_sizes[l+1] x layer_sizes[l]`; bias `l` has length `layer_sizes[l+1]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseNet {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    hidden_activation: Activation,
    output_activation: Activation,
}

/// Per-layer activations recorded by [`DenseNet::forward_cached`] for reuse in
/// backward passes. `activations[0]` is the input, `activations[L]` the output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    #[inline]
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache has layers")
    }
}

impl DenseNet {
    /// Build a network with weights drawn uniformly from `±1/sqrt(fan_in)` and
    /// zero biases.
    pub fn new<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(
            layer_sizes.len() >= 2,
            "need at least input and output sizes"
        );
        assert!(
            layer_sizes.iter().all(|&n| n > 0),
            "layer sizes must be positive"
        );
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let layer: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            weights.push(layer);
            biases.push(vec![0.0; fan_out]);
        }
        Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            hidden_activation,
            output_activation,
        }
    }

    /// All-zero network with the given shape. Useful in tests and as an
    /// explicit degenerate case.
    pub fn zeros(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Self {
        assert!(
            layer_sizes.len() >= 2,
            "need at least input and output sizes"
        );
        let weights = layer_sizes
            .windows(2)
            .map(|w| vec![0.0; w[0] * w[1]])
            .collect();
        let biases = layer_sizes.windows(2).map(|w| vec![0.0; w[1]]).collect();
        Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            hidden_activation,
            output_activation,
        }
    }

    /// Rebuild from raw parts (checkpoint loading). Panics on inconsistent
    /// shapes.
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Self {
        assert_eq!(weights.len(), layer_sizes.len() - 1);
        assert_eq!(biases.len(), layer_sizes.len() - 1);
        for (l, w) in layer_sizes.windows(2).enumerate() {
            assert_eq!(weights[l].len(), w[0] * w[1], "weight {l} shape");
            assert_eq!(biases[l].len(), w[1], "bias {l} shape");
        }
        Self {
            layer_sizes,
            weights,
            biases,
            hidden_activation,
            output_activation,
        }
    }

    #[inline]
    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    #[inline]
    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    #[inline]
    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    fn activation_for_layer(&self, layer: usize) -> Activation {
        if layer + 1 == self.weights.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    /// Forward pass.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.input_dim(), "input dimension mismatch");
        let mut a = input.to_vec();
        for l in 0..self.weights.len() {
            a = self.layer_forward(l, &a);
        }
        a
    }

    /// Forward pass to a scalar output. Panics unless the output dim is 1.
    #[inline]
    pub fn forward_scalar(&self, input: &[f64]) -> f64 {
        assert_eq!(self.output_dim(), 1, "scalar forward on non-scalar net");
        self.forward(input)[0]
    }

    /// Forward pass recording every layer activation for a later backward.
    pub fn forward_cached(&self, input: &[f64]) -> ForwardCache {
        assert_eq!(input.len(), self.input_dim(), "input dimension mismatch");
        let mut activations = Vec::with_capacity(self.weights.len() + 1);
        activations.push(input.to_vec());
        for l in 0..self.weights.len() {
            let next = self.layer_forward(l, activations.last().unwrap());
            activations.push(next);
        }
        ForwardCache { activations }
    }

    fn layer_forward(&self, layer: usize, input: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
        let w = &self.weights[layer];
        let b = &self.biases[layer];
        let act = self.activation_for_layer(layer);
        let mut out = Vec::with_capacity(n_out);
        for o in 0..n_out {
            let row = &w[o * n_in..(o + 1) * n_in];
            let z: f64 = row.iter().zip(input).map(|(wi, xi)| wi * xi).sum::<f64>() + b[o];
            out.push(act.apply(z));
        }
        out
    }

    /// Reverse pass from an output cotangent: returns parameter gradients and
    /// the gradient with respect to the input.
    pub fn backward(&self, input: &[f64], output_cotangent: &[f64]) -> (Gradients, Vec<f64>) {
        let cache = self.forward_cached(input);
        self.backward_cached(&cache, output_cotangent)
    }

    /// Reverse pass reusing a recorded forward.
    pub fn backward_cached(
        &self,
        cache: &ForwardCache,
        output_cotangent: &[f64],
    ) -> (Gradients, Vec<f64>) {
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.backward_acc(cache, output_cotangent, &mut grads);
        (grads, input_grad)
    }

    /// Reverse pass that accumulates parameter gradients into `acc` (`+=`) and
    /// returns the input gradient. The workhorse for batched losses.
    pub fn backward_acc(
        &self,
        cache: &ForwardCache,
        output_cotangent: &[f64],
        acc: &mut Gradients,
    ) -> Vec<f64> {
        assert_eq!(
            output_cotangent.len(),
            self.output_dim(),
            "cotangent dimension mismatch"
        );
        assert_eq!(cache.activations.len(), self.weights.len() + 1);

        // delta = dLoss/dz at the current layer, starting from the output.
        let out_act = self.output_activation;
        let mut delta: Vec<f64> = cache
            .output()
            .iter()
            .zip(output_cotangent)
            .map(|(&y, &c)| c * out_act.derivative_from_output(y))
            .collect();

        for l in (0..self.weights.len()).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let a_in = &cache.activations[l];
            let w = &self.weights[l];
            let gw = &mut acc.weights[l];
            let gb = &mut acc.biases[l];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                gb[o] += d;
                let row = &w[o * n_in..(o + 1) * n_in];
                let grow = &mut gw[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    grow[i] += d * a_in[i];
                    prev[i] += d * row[i];
                }
            }
            if l > 0 {
                let act = self.activation_for_layer(l - 1);
                for (p, &a) in prev.iter_mut().zip(a_in.iter()) {
                    *p *= act.derivative_from_output(a);
                }
            }
            delta = prev;
        }
        delta
    }

    /// Input gradient alone — the delta propagation of `backward_acc` without
    /// parameter accumulation. For losses that only need d(output)/d(input),
    /// e.g. dQ/da inside a policy objective.
    pub fn input_gradient(&self, cache: &ForwardCache, output_cotangent: &[f64]) -> Vec<f64> {
        assert_eq!(
            output_cotangent.len(),
            self.output_dim(),
            "cotangent dimension mismatch"
        );
        let out_act = self.output_activation;
        let mut delta: Vec<f64> = cache
            .output()
            .iter()
            .zip(output_cotangent)
            .map(|(&y, &c)| c * out_act.derivative_from_output(y))
            .collect();

        for l in (0..self.weights.len()).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = &self.weights[l];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                let row = &w[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    prev[i] += d * row[i];
                }
            }
            if l > 0 {
                let act = self.activation_for_layer(l - 1);
                let a_in = &cache.activations[l];
                for (p, &a) in prev.iter_mut().zip(a_in.iter()) {
                    *p *= act.derivative_from_output(a);
                }
            }
            delta = prev;
        }
        delta
    }

    /// Polyak tracking: `self <- tau * src + (1 - tau) * self`.
    pub fn polyak_from(&mut self, src: &DenseNet, tau: f64) {
        assert_eq!(self.layer_sizes, src.layer_sizes, "polyak shape mismatch");
        for (dst, s) in self.weights.iter_mut().zip(&src.weights) {
            for (d, &x) in dst.iter_mut().zip(s) {
                *d = tau * x + (1.0 - tau) * *d;
            }
        }
        for (dst, s) in self.biases.iter_mut().zip(&src.biases) {
            for (d, &x) in dst.iter_mut().zip(s) {
                *d = tau * x + (1.0 - tau) * *d;
            }
        }
    }

    /// True when every parameter is finite.
    pub fn all_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Total parameter count.
    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Visit every parameter mutably, in a fixed order (weights then bias,
    /// layer by layer). Used by finite-difference checks.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for l in 0..self.weights.len() {
            for w in &mut self.weights[l] {
                f(w);
            }
            for b in &mut self.biases[l] {
                f(b);
            }
        }
    }

    /// Bitwise parameter equality.
    pub fn bits_eq(&self, other: &DenseNet) -> bool {
        if self.layer_sizes != other.layer_sizes {
            return false;
        }
        let eq = |a: &[Vec<f64>], b: &[Vec<f64>]| {
            a.iter().zip(b).all(|(x, y)| {
                x.iter()
                    .zip(y)
                    .all(|(p, q)| p.to_bits() == q.to_bits())
            })
        };
        eq(&self.weights, &other.weights) && eq(&self.biases, &other.biases)
    }
}

/// Parameter-shaped gradient (or moment) storage mirroring a [`DenseNet`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// `self += other`.
    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// `self *= k`.
    pub fn scale(&mut self, k: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for x in v.iter_mut() {
                *x *= k;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Flatten in the same order as [`DenseNet::for_each_param_mut`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in 0..self.weights.len() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = DenseNet::zeros(&[3, 8, 2], Activation::Tanh, Activation::Identity);
        let out = net.forward(&[0.4, -1.0, 2.5]);
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_one_by_one() {
        let mut net = DenseNet::zeros(&[1, 1], Activation::Identity, Activation::Identity);
        net.weights[0][0] = 1.0;
        let out = net.forward(&[0.7]);
        assert_eq!(out, vec![0.7]);
    }

    /// Straight-line re-computation of a 3-8-2 forward pass, kept independent
    /// of the layered implementation above.
    fn oracle_forward_382(net: &DenseNet, input: &[f64]) -> Vec<f64> {
        let w0 = net.weights();
        let b = net.biases();
        let mut h = [0.0f64; 8];
        for o in 0..8 {
            let mut z = b[0][o];
            for i in 0..3 {
                z += w0[0][o * 3 + i] * input[i];
            }
            h[o] = z.tanh();
        }
        let mut y = [0.0f64; 2];
        for o in 0..2 {
            let mut z = b[1][o];
            for i in 0..8 {
                z += w0[1][o * 8 + i] * h[i];
            }
            y[o] = z;
        }
        y.to_vec()
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = DenseNet::new(&[3, 8, 2], Activation::Tanh, Activation::Identity, &mut rng);
        let input = [0.3, -0.9, 1.7];
        let got = net.forward(&input);
        let want = oracle_forward_382(&net, &input);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "got {g}, want {w}");
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::new(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut rng);
        let (grads, input_grad) = net.backward(&[0.1, 0.2, 0.3], &[0.0, 0.0]);
        assert!(grads.flatten().iter().all(|&g| g == 0.0));
        assert!(input_grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn scalar_affine_gradients() {
        // y = w*x + b, cotangent 1 => dw = x, db = 1, dx = w.
        let mut net = DenseNet::zeros(&[1, 1], Activation::Identity, Activation::Identity);
        net.weights[0][0] = -1.3;
        net.biases[0][0] = 0.2;
        let (grads, input_grad) = net.backward(&[0.8], &[1.0]);
        assert!((grads.weights[0][0] - 0.8).abs() < 1e-15);
        assert!((grads.biases[0][0] - 1.0).abs() < 1e-15);
        assert!((input_grad[0] - (-1.3)).abs() < 1e-15);
    }

    /// Central finite differences of the scalar output wrt every parameter.
    fn fd_param_grads(net: &DenseNet, input: &[f64], h: f64) -> Vec<f64> {
        let mut grads = Vec::with_capacity(net.param_count());
        let mut idx = 0;
        loop {
            let mut plus = net.clone();
            let mut minus = net.clone();
            let mut k = 0;
            let mut found = false;
            plus.for_each_param_mut(|p| {
                if k == idx {
                    *p += h;
                    found = true;
                }
                k += 1;
            });
            if !found {
                break;
            }
            let mut k = 0;
            minus.for_each_param_mut(|p| {
                if k == idx {
                    *p -= h;
                }
                k += 1;
            });
            let f_plus = plus.forward(input)[0];
            let f_minus = minus.forward(input)[0];
            grads.push((f_plus - f_minus) / (2.0 * h));
            idx += 1;
        }
        grads
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let net = DenseNet::new(
            &[4, 16, 16, 1],
            Activation::Tanh,
            Activation::Identity,
            &mut rng,
        );
        let input = [0.3, -0.2, 0.9, -1.4];
        let (grads, _) = net.backward(&input, &[1.0]);
        let analytic = grads.flatten();
        let numeric = fd_param_grads(&net, &input, 1e-5);
        assert_eq!(analytic.len(), numeric.len());
        for (a, n) in analytic.iter().zip(&numeric) {
            let scale = a.abs().max(n.abs()).max(1e-8);
            assert!(
                (a - n).abs() / scale < 1e-4,
                "analytic {a} vs numeric {n}"
            );
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = DenseNet::new(
            &[3, 8, 1],
            Activation::Tanh,
            Activation::Identity,
            &mut rng,
        );
        let input = [0.5, -0.7, 0.1];
        let (_, input_grad) = net.backward(&input, &[1.0]);
        let h = 1e-6;
        for i in 0..3 {
            let mut plus = input;
            plus[i] += h;
            let mut minus = input;
            minus[i] -= h;
            let fd = (net.forward(&plus)[0] - net.forward(&minus)[0]) / (2.0 * h);
            assert!(
                (input_grad[i] - fd).abs() < 1e-6,
                "dim {i}: {} vs {fd}",
                input_grad[i]
            );
        }
    }

    #[test]
    fn input_gradient_shortcut_matches_full_backward_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for hidden in [Activation::Tanh, Activation::Relu] {
            let net = DenseNet::new(&[4, 8, 8, 2], hidden, Activation::Identity, &mut rng);
            let x = [0.3, -0.9, 0.2, 1.1];
            let cache = net.forward_cached(&x);
            let cot = [0.3, -1.7];
            let (_, full) = net.backward_cached(&cache, &cot);
            let fast = net.input_gradient(&cache, &cot);
            assert_eq!(full, fast);
        }
    }

    #[test]
    fn relu_hidden_backward_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::new(
            &[2, 8, 1],
            Activation::Relu,
            Activation::Identity,
            &mut rng,
        );
        let input = [0.4, -0.6];
        let (grads, _) = net.backward(&input, &[1.0]);
        let analytic = grads.flatten();
        let numeric = fd_param_grads(&net, &input, 1e-6);
        for (a, n) in analytic.iter().zip(&numeric) {
            let scale = a.abs().max(n.abs()).max(1e-6);
            assert!((a - n).abs() / scale < 1e-4, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn polyak_tau_one_copies_and_tau_zero_keeps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = DenseNet::new(&[2, 4, 1], Activation::Tanh, Activation::Identity, &mut rng);
        let dst0 = DenseNet::new(&[2, 4, 1], Activation::Tanh, Activation::Identity, &mut rng);

        let mut dst = dst0.clone();
        dst.polyak_from(&src, 1.0);
        assert!(dst.bits_eq(&src));

        let mut dst = dst0.clone();
        dst.polyak_from(&src, 0.0);
        assert!(dst.bits_eq(&dst0));
    }
}
