//! Tanh-squashed diagonal Gaussian policy.
//!
//! The trunk maps an observation to `2m` outputs: the first `m` are the
//! Gaussian mean, the last `m` the raw log-std (clamped to
//! `[LOG_STD_MIN, LOG_STD_MAX]`). An action is
//! `a_i = scale_i * tanh(u_i) + bias_i` with `u = mean + std * eps`.
//!
//! Log-density under the change of variables:
//! `log p(a) = sum_i [ logN(u_i; mean_i, std_i) - ln scale_i - ln(1 - tanh^2 u_i) ]`
//! where `ln(1 - tanh^2 u) = 2 (ln 2 - u - softplus(-2u))`, which stays finite
//! for any `u` while the naive form underflows to `-inf` past `|u| ~ 19`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{DenseNet, ForwardCache, Gradients};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_2PI: f64 = 1.8378770664093453; // ln(2*pi)

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable `ln(1 - tanh(u)^2)`.
#[inline]
pub fn ln_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// Distribution parameters at one observation, plus the trunk cache needed to
/// push loss gradients back through it.
#[derive(Debug, Clone)]
pub struct PolicyHead {
    cache: ForwardCache,
    pub mean: Vec<f64>,
    /// Clamped log-std.
    pub log_std: Vec<f64>,
    pub std: Vec<f64>,
    /// True where the clamp is binding; gradients through log-std vanish there.
    clamp_active: Vec<bool>,
}

/// One reparameterized draw.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub action: Vec<f64>,
    pub pre_tanh: Vec<f64>,
    pub log_prob: f64,
}

/// Per-dimension partial derivatives for the reparameterized sampling path
/// (`u = mean + std * eps` with `eps` held fixed).
#[derive(Debug, Clone)]
pub struct ReparamGrads {
    pub dlogp_dmean: Vec<f64>,
    pub dlogp_dlog_std: Vec<f64>,
    /// `d action_i / d mean_i` (the Jacobian is diagonal).
    pub daction_dmean: Vec<f64>,
    pub daction_dlog_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SquashedGaussianPolicy {
    pub trunk: DenseNet,
    pub action_scale: Vec<f64>,
    pub action_bias: Vec<f64>,
}

impl SquashedGaussianPolicy {
    /// `trunk` must output `2 * action_dim` values with identity output
    /// activation.
    pub fn new(trunk: DenseNet, action_scale: Vec<f64>, action_bias: Vec<f64>) -> Self {
        assert_eq!(action_scale.len(), action_bias.len());
        assert_eq!(
            trunk.output_dim(),
            2 * action_scale.len(),
            "trunk must emit mean and log-std per action dim"
        );
        Self {
            trunk,
            action_scale,
            action_bias,
        }
    }

    #[inline]
    pub fn action_dim(&self) -> usize {
        self.action_scale.len()
    }

    #[inline]
    pub fn obs_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    /// Run the trunk and split/clamp its output into distribution parameters.
    pub fn head(&self, obs: &[f64]) -> PolicyHead {
        let m = self.action_dim();
        let cache = self.trunk.forward_cached(obs);
        let out = cache.output();
        let mean = out[..m].to_vec();
        let mut log_std = Vec::with_capacity(m);
        let mut clamp_active = Vec::with_capacity(m);
        for &raw in &out[m..] {
            let clamped = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
            clamp_active.push(raw < LOG_STD_MIN || raw > LOG_STD_MAX);
            log_std.push(clamped);
        }
        let std = log_std.iter().map(|&l| l.exp()).collect();
        PolicyHead {
            cache,
            mean,
            log_std,
            std,
            clamp_active,
        }
    }

    /// Squash a pre-tanh vector into the action box.
    pub fn squash(&self, pre_tanh: &[f64]) -> Vec<f64> {
        pre_tanh
            .iter()
            .zip(&self.action_scale)
            .zip(&self.action_bias)
            .map(|((&u, &s), &b)| s * u.tanh() + b)
            .collect()
    }

    /// Deterministic action: squashed mean, no noise.
    pub fn mean_action(&self, obs: &[f64]) -> Vec<f64> {
        let head = self.head(obs);
        self.squash(&head.mean)
    }

    /// Log-density of the action whose pre-tanh value is `u`.
    pub fn log_prob_pre_tanh(&self, head: &PolicyHead, u: &[f64]) -> f64 {
        assert_eq!(u.len(), self.action_dim());
        let mut lp = 0.0;
        for i in 0..u.len() {
            let z = (u[i] - head.mean[i]) / head.std[i];
            lp += -0.5 * z * z - head.log_std[i] - 0.5 * LN_2PI;
            lp -= self.action_scale[i].ln();
            lp -= ln_one_minus_tanh_sq(u[i]);
        }
        lp
    }

    /// Reparameterized draw from standard-normal `noise` (one entry per
    /// action dim).
    pub fn sample_from_noise(&self, head: &PolicyHead, noise: &[f64]) -> PolicySample {
        assert_eq!(noise.len(), self.action_dim());
        let pre_tanh: Vec<f64> = head
            .mean
            .iter()
            .zip(&head.std)
            .zip(noise)
            .map(|((&m, &s), &e)| m + s * e)
            .collect();
        let action = self.squash(&pre_tanh);
        let log_prob = self.log_prob_pre_tanh(head, &pre_tanh);
        PolicySample {
            action,
            pre_tanh,
            log_prob,
        }
    }

    /// Draw noise from `rng` and sample.
    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> PolicySample {
        let head = self.head(obs);
        let noise: Vec<f64> = (0..self.action_dim())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        self.sample_from_noise(&head, &noise)
    }

    /// Partials of `log p` and `action` wrt (mean, log-std) along the
    /// reparameterized path, `eps` fixed. Derivations:
    /// `d logp / d u = 2 tanh(u)`, `du/dmean = 1`, `du/dlog_std = std * eps`,
    /// `da/du = scale (1 - tanh^2 u)`, and the explicit `-1` per dim from the
    /// `-log_std` entropy term.
    pub fn reparam_grads(&self, head: &PolicyHead, sample: &PolicySample) -> ReparamGrads {
        let m = self.action_dim();
        let mut g = ReparamGrads {
            dlogp_dmean: Vec::with_capacity(m),
            dlogp_dlog_std: Vec::with_capacity(m),
            daction_dmean: Vec::with_capacity(m),
            daction_dlog_std: Vec::with_capacity(m),
        };
        for i in 0..m {
            let u = sample.pre_tanh[i];
            let t = u.tanh();
            let du_dlog_std = u - head.mean[i]; // std * eps
            g.dlogp_dmean.push(2.0 * t);
            g.dlogp_dlog_std.push(-1.0 + 2.0 * t * du_dlog_std);
            let da_du = self.action_scale[i] * (1.0 - t * t);
            g.daction_dmean.push(da_du);
            g.daction_dlog_std.push(da_du * du_dlog_std);
        }
        g
    }

    /// Partials of `log p(a)` wrt (mean, log-std) with the action — hence its
    /// pre-tanh `u` — held fixed (likelihood-ratio path).
    pub fn given_action_grads(&self, head: &PolicyHead, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.action_dim();
        let mut d_mean = Vec::with_capacity(m);
        let mut d_log_std = Vec::with_capacity(m);
        for i in 0..m {
            let z = (u[i] - head.mean[i]) / head.std[i];
            d_mean.push(z / head.std[i]);
            d_log_std.push(z * z - 1.0);
        }
        (d_mean, d_log_std)
    }

    /// Partial of the squashed mean action wrt the mean (diagonal Jacobian).
    pub fn mean_action_grads(&self, head: &PolicyHead) -> Vec<f64> {
        head.mean
            .iter()
            .zip(&self.action_scale)
            .map(|(&m, &s)| {
                let t = m.tanh();
                s * (1.0 - t * t)
            })
            .collect()
    }

    /// Push per-dimension cotangents on (mean, log-std) back through the
    /// trunk, accumulating into `acc`. Dimensions where the log-std clamp is
    /// binding receive zero gradient. Returns the observation gradient.
    pub fn backward_head(
        &self,
        head: &PolicyHead,
        d_mean: &[f64],
        d_log_std: &[f64],
        acc: &mut Gradients,
    ) -> Vec<f64> {
        let m = self.action_dim();
        assert_eq!(d_mean.len(), m);
        assert_eq!(d_log_std.len(), m);
        let mut cot = Vec::with_capacity(2 * m);
        cot.extend_from_slice(d_mean);
        for i in 0..m {
            cot.push(if head.clamp_active[i] { 0.0 } else { d_log_std[i] });
        }
        self.trunk.backward_acc(&head.cache, &cot, acc)
    }
}
