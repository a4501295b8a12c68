//! Replay storage for off-policy training, rollout storage for on-policy
//! training, and advantage estimation.

use rand::{Rng, RngCore};

/// One environment transition. `done` covers time-limit termination too; the
/// bootstrap is masked either way.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    storage: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        Self {
            storage: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            // Overwrite the oldest slot.
            self.storage[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.storage[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }

    /// Uniform sample of `n` indices with replacement. Deterministic under a
    /// fixed rng state.
    pub fn sample_indices(&self, n: usize, rng: &mut dyn RngCore) -> Vec<usize> {
        assert!(!self.is_empty(), "cannot sample from an empty buffer");
        (0..n).map(|_| rng.gen_range(0..self.storage.len())).collect()
    }

    /// Clone out a minibatch of `n` transitions, uniform with replacement.
    pub fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Vec<Transition> {
        self.sample_indices(n, rng)
            .into_iter()
            .map(|i| self.storage[i].clone())
            .collect()
    }
}

/// One step recorded during an on-policy collection phase. Stores the pre-tanh
/// action and its log-density at collection time so ratios are exactly one on
/// the first pass, plus the value estimate used by the advantage recursion.
#[derive(Debug, Clone)]
pub struct RolloutStep {
    pub s: Vec<f64>,
    /// Squashed action as executed.
    pub a: Vec<f64>,
    /// Pre-tanh sample; the quantity new log-probs are evaluated at.
    pub pre_tanh: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

/// Ordered storage for one collection phase; cleared every iteration.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub steps: Vec<RolloutStep>,
}

impl RolloutBuffer {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            steps: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, step: RolloutStep) {
        self.steps.push(step);
    }

    pub fn clear(&mut self) {
        self.steps.clear();
    }
}

/// GAE(λ) over one rollout. Returns raw (unnormalized) advantages and the
/// value targets `returns = advantages + values`; normalization happens per
/// minibatch at the consumer.
///
/// `last_value` bootstraps the final step when the rollout was truncated
/// mid-episode; `done` masks the bootstrap at episode boundaries, so with
/// done = true at t the advantage depends on δ_t alone.
pub fn compute_advantages(
    rollout: &RolloutBuffer,
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert!(!rollout.is_empty(), "advantages need a non-empty rollout");
    assert!(gamma > 0.0 && gamma <= 1.0);
    assert!((0.0..=1.0).contains(&lambda));
    let n = rollout.len();
    let mut advantages = vec![0.0; n];
    let mut gae = 0.0;
    for t in (0..n).rev() {
        let step = &rollout.steps[t];
        let mask = if step.done { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n {
            rollout.steps[t + 1].value
        } else {
            last_value
        };
        let delta = step.r + gamma * mask * next_value - step.value;
        gae = delta + gamma * lambda * mask * gae;
        advantages[t] = gae;
    }
    let returns = advantages
        .iter()
        .zip(&rollout.steps)
        .map(|(a, s)| a + s.value)
        .collect();
    (advantages, returns)
}
