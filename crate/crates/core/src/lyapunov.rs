//! Learned Lyapunov candidates and their empirical risks.
//!
//! The central object is a scalar network L over state-action pairs together
//! with a discrete Lie derivative along recorded transitions,
//! `(L(s', π(s')) − L(s, a)) / Δt`, where π(s') is the current policy's
//! deterministic (squashed-mean) action. Evaluating the successor term under
//! the *current* policy is what makes the estimate valid on off-policy replay
//! data. A state-only variant implements the older on-policy risk for the
//! baseline mode.
//!
//! Risks:
//! * training risk: mean over the batch of
//!   `max(0, −L(s,a)) + max(0, lie + μ)`, plus `L(s_G, π(s_G))²` added once
//!   outside the mean;
//! * certification risk: the same expression with μ = 0, computed through the
//!   same code path so the two agree bit-for-bit when μ = 0.
//!
//! Risk gradients flow into L's parameters only; the policy is a constant
//! here (policy and Lyapunov updates are separate optimization steps).

use rand::RngCore;

use crate::buffers::Transition;
use crate::nn::{DenseNet, Gradients, SquashedGaussianPolicy};
use crate::par;

/// Which inputs the candidate consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LyapunovKind {
    /// L(s, a): the off-policy formulation.
    StateAction,
    /// L(s): the prior on-policy formulation, kept as a baseline.
    StateOnly,
}

#[derive(Debug, Clone)]
pub struct LyapunovFunction {
    /// Scalar net over (s ⧺ a) or s, unconstrained output; positivity is
    /// enforced through the risk, not the architecture.
    pub net: DenseNet,
    pub kind: LyapunovKind,
    /// Minimum decrease rate demanded during training.
    pub mu: f64,
    /// Environment step, the denominator of the discrete Lie derivative.
    pub dt: f64,
    /// Observation of the goal state s_G.
    pub goal_obs: Vec<f64>,
}

impl LyapunovFunction {
    pub fn new_state_action(net: DenseNet, mu: f64, dt: f64, goal_obs: Vec<f64>) -> Self {
        assert_eq!(net.output_dim(), 1, "Lyapunov net must be scalar");
        assert!(
            net.input_dim() > goal_obs.len(),
            "state-action net input must extend the observation"
        );
        assert!(mu >= 0.0 && dt > 0.0);
        Self {
            net,
            kind: LyapunovKind::StateAction,
            mu,
            dt,
            goal_obs,
        }
    }

    pub fn new_state_only(net: DenseNet, mu: f64, dt: f64, goal_obs: Vec<f64>) -> Self {
        assert_eq!(net.output_dim(), 1, "Lyapunov net must be scalar");
        assert_eq!(net.input_dim(), goal_obs.len(), "state-only input width");
        assert!(mu >= 0.0 && dt > 0.0);
        Self {
            net,
            kind: LyapunovKind::StateOnly,
            mu,
            dt,
            goal_obs,
        }
    }

    fn concat(s: &[f64], a: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(s.len() + a.len());
        x.extend_from_slice(s);
        x.extend_from_slice(a);
        x
    }

    /// L(s, a). State-action kind only.
    pub fn value_state_action(&self, s: &[f64], a: &[f64]) -> f64 {
        debug_assert_eq!(self.kind, LyapunovKind::StateAction);
        self.net.forward_scalar(&Self::concat(s, a))
    }

    /// L(s). State-only kind only.
    pub fn value_state(&self, s: &[f64]) -> f64 {
        debug_assert_eq!(self.kind, LyapunovKind::StateOnly);
        self.net.forward_scalar(s)
    }

    /// Values entering one transition's risk term: (L at the transition,
    /// L at the successor under the current policy).
    fn pair_values(&self, t: &Transition, policy: Option<&SquashedGaussianPolicy>) -> (f64, f64) {
        match self.kind {
            LyapunovKind::StateAction => {
                let policy = policy.expect("state-action risk needs the policy");
                let a_next = policy.mean_action(&t.s_next);
                (
                    self.net.forward_scalar(&Self::concat(&t.s, &t.a)),
                    self.net.forward_scalar(&Self::concat(&t.s_next, &a_next)),
                )
            }
            LyapunovKind::StateOnly => (
                self.net.forward_scalar(&t.s),
                self.net.forward_scalar(&t.s_next),
            ),
        }
    }

    fn goal_value(&self, policy: Option<&SquashedGaussianPolicy>) -> f64 {
        match self.kind {
            LyapunovKind::StateAction => {
                let policy = policy.expect("state-action risk needs the policy");
                let a_g = policy.mean_action(&self.goal_obs);
                self.net.forward_scalar(&Self::concat(&self.goal_obs, &a_g))
            }
            LyapunovKind::StateOnly => self.net.forward_scalar(&self.goal_obs),
        }
    }

    /// Discrete Lie derivative along one transition under the current policy.
    pub fn lie_derivative(
        &self,
        s: &[f64],
        a: &[f64],
        s_next: &[f64],
        policy: &SquashedGaussianPolicy,
    ) -> f64 {
        let t = Transition {
            s: s.to_vec(),
            a: a.to_vec(),
            r: 0.0,
            s_next: s_next.to_vec(),
            done: false,
        };
        let (l_now, l_next) = self.pair_values(&t, Some(policy));
        (l_next - l_now) / self.dt
    }

    /// Shared value path for every risk; μ is a parameter so the μ = 0
    /// certification case is literally the same arithmetic.
    fn risk_with_mu(
        &self,
        batch: &[Transition],
        policy: Option<&SquashedGaussianPolicy>,
        mu: f64,
    ) -> f64 {
        assert!(!batch.is_empty(), "risk of an empty batch");
        let dt = self.dt;
        let sum = par::chunked_fold(
            batch,
            || 0.0,
            |acc: f64, t: &Transition| {
                let (l_now, l_next) = self.pair_values(t, policy);
                let lie = (l_next - l_now) / dt;
                // Item term formed before adding, so the gradient twin can sum
                // in the identical association order.
                let term = (-l_now).max(0.0) + (lie + mu).max(0.0);
                acc + term
            },
            |a, b| a + b,
        );
        let goal = self.goal_value(policy);
        sum / batch.len() as f64 + goal * goal
    }

    /// Gradient twin of [`Self::risk_with_mu`]; same chunk order, so the
    /// returned value is bit-identical to the value-only path.
    fn risk_grad_with_mu(
        &self,
        batch: &[Transition],
        policy: Option<&SquashedGaussianPolicy>,
        mu: f64,
    ) -> (f64, Gradients) {
        assert!(!batch.is_empty(), "risk of an empty batch");
        let dt = self.dt;
        let per_item = |acc: (f64, Gradients), t: &Transition| -> (f64, Gradients) {
            let (mut risk, mut grads) = acc;
            let (x_now, x_next) = match self.kind {
                LyapunovKind::StateAction => {
                    let policy = policy.expect("state-action risk needs the policy");
                    let a_next = policy.mean_action(&t.s_next);
                    (
                        Self::concat(&t.s, &t.a),
                        Self::concat(&t.s_next, &a_next),
                    )
                }
                LyapunovKind::StateOnly => (t.s.clone(), t.s_next.clone()),
            };
            let cache_now = self.net.forward_cached(&x_now);
            let cache_next = self.net.forward_cached(&x_next);
            let l_now = cache_now.output()[0];
            let l_next = cache_next.output()[0];
            let lie = (l_next - l_now) / dt;

            let mut cot_now = 0.0;
            let mut cot_next = 0.0;
            if -l_now > 0.0 {
                cot_now -= 1.0;
            }
            if lie + mu > 0.0 {
                cot_now -= 1.0 / dt;
                cot_next += 1.0 / dt;
            }
            if cot_now != 0.0 {
                self.net.backward_acc(&cache_now, &[cot_now], &mut grads);
            }
            if cot_next != 0.0 {
                self.net.backward_acc(&cache_next, &[cot_next], &mut grads);
            }
            let term = (-l_now).max(0.0) + (lie + mu).max(0.0);
            risk += term;
            (risk, grads)
        };
        let (sum, mut grads) = par::chunked_fold(
            batch,
            || (0.0, Gradients::zeros_like(&self.net)),
            per_item,
            |mut a, b| {
                a.0 += b.0;
                a.1.add(&b.1);
                a
            },
        );
        grads.scale(1.0 / batch.len() as f64);

        // Goal term sits outside the batch mean.
        let x_g = match self.kind {
            LyapunovKind::StateAction => {
                let policy = policy.expect("state-action risk needs the policy");
                let a_g = policy.mean_action(&self.goal_obs);
                Self::concat(&self.goal_obs, &a_g)
            }
            LyapunovKind::StateOnly => self.goal_obs.clone(),
        };
        let cache_g = self.net.forward_cached(&x_g);
        let l_g = cache_g.output()[0];
        self.net.backward_acc(&cache_g, &[2.0 * l_g], &mut grads);

        (sum / batch.len() as f64 + l_g * l_g, grads)
    }

    /// Empirical training risk with the configured μ.
    pub fn training_risk(&self, batch: &[Transition], policy: &SquashedGaussianPolicy) -> f64 {
        self.risk_with_mu(batch, Some(policy), self.mu)
    }

    pub fn training_risk_grad(
        &self,
        batch: &[Transition],
        policy: &SquashedGaussianPolicy,
    ) -> (f64, Gradients) {
        self.risk_grad_with_mu(batch, Some(policy), self.mu)
    }

    /// Certification risk: the training expression at μ = 0. Convergence to
    /// zero is the certificate criterion.
    pub fn certification_risk(
        &self,
        batch: &[Transition],
        policy: &SquashedGaussianPolicy,
    ) -> f64 {
        self.risk_with_mu(batch, Some(policy), 0.0)
    }

    /// Fraction of transitions whose Lie derivative is strictly positive under
    /// the current policy — the raw decrease-condition violation rate.
    pub fn violation_fraction(
        &self,
        batch: &[Transition],
        policy: &SquashedGaussianPolicy,
    ) -> f64 {
        assert!(!batch.is_empty(), "violation fraction of an empty batch");
        let dt = self.dt;
        let count = par::chunked_fold(
            batch,
            || 0usize,
            |acc: usize, t: &Transition| {
                let (l_now, l_next) = self.pair_values(t, Some(policy));
                acc + usize::from((l_next - l_now) / dt > 0.0)
            },
            |a, b| a + b,
        );
        count as f64 / batch.len() as f64
    }

    /// State-only on-policy risk of the prior formulation (μ = 0); baseline
    /// mode only.
    pub fn on_policy_risk(&self, batch: &[Transition]) -> f64 {
        assert_eq!(self.kind, LyapunovKind::StateOnly);
        self.risk_with_mu(batch, None, 0.0)
    }

    /// On-policy risk with the configured μ; what the baseline trainer
    /// minimizes (μ = 0 recovers the published form).
    pub fn on_policy_training_risk(&self, batch: &[Transition]) -> f64 {
        assert_eq!(self.kind, LyapunovKind::StateOnly);
        self.risk_with_mu(batch, None, self.mu)
    }

    pub fn on_policy_training_risk_grad(&self, batch: &[Transition]) -> (f64, Gradients) {
        assert_eq!(self.kind, LyapunovKind::StateOnly);
        self.risk_grad_with_mu(batch, None, self.mu)
    }

    /// Monte-Carlo state value `E_{a~π} L(s, a)` (analysis only — level sets,
    /// positivity probes). State-only candidates return L(s) directly.
    pub fn state_value(
        &self,
        s: &[f64],
        policy: &SquashedGaussianPolicy,
        n_samples: usize,
        rng: &mut dyn RngCore,
    ) -> f64 {
        match self.kind {
            LyapunovKind::StateOnly => self.value_state(s),
            LyapunovKind::StateAction => {
                assert!(n_samples > 0);
                let mut acc = 0.0;
                for _ in 0..n_samples {
                    let sample = policy.sample(s, rng);
                    acc += self.value_state_action(s, &sample.action);
                }
                acc / n_samples as f64
            }
        }
    }
}
