//! Native control environments: pendulum swing-up and quadrotor trajectory
//! tracking, plus reference-trajectory generation for the latter.
//!
//! Both environments are deterministic given (state, action); all randomness
//! enters through `reset`.

mod pendulum;
mod quadrotor;

pub use pendulum::{pendulum_obs, pendulum_step, Pendulum, PendulumState};
pub use quadrotor::{
    default_reference, generate_reference, quat, quadrotor_observe, quadrotor_step, Quadrotor,
    QuadrotorParams, QuadrotorState, ReferenceTrajectory, RewardWeights, POS_NORM, RATE_NORM,
    VEL_NORM,
};

use rand::RngCore;

/// Errors surfaced by environment and reference-trajectory code.
#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("non-finite state at rollout step {step}")]
    NonFiniteState { step: usize },
    #[error("reference trajectory is empty")]
    EmptyTrajectory,
    #[error("reference csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Static facts about an environment that trainers, certification, and
/// checkpoint reconstruction all need.
#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Integration step, the Δt of discrete Lie derivatives.
    pub dt: f64,
    pub episode_length: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    /// Observation of the goal state s_G.
    pub goal_obs: Vec<f64>,
    /// Per-component scale for normalized observation distance (certification
    /// regions are balls in these units).
    pub obs_norm: Vec<f64>,
}

impl EnvSpec {
    /// Half-width of the action box per dimension; the tanh squash factor.
    pub fn action_scale(&self) -> Vec<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(&lo, &hi)| 0.5 * (hi - lo))
            .collect()
    }

    /// Center of the action box per dimension.
    pub fn action_bias(&self) -> Vec<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(&lo, &hi)| 0.5 * (hi + lo))
            .collect()
    }

    /// Distance between observations in normalized units.
    pub fn normalized_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), self.obs_dim);
        debug_assert_eq!(b.len(), self.obs_dim);
        a.iter()
            .zip(b)
            .zip(&self.obs_norm)
            .map(|((&x, &y), &n)| {
                let d = (x - y) / n;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// True when the episode ended with this step (time limit included).
    pub done: bool,
}

/// A resettable, steppable episodic environment. Actions outside the bounds
/// are clipped internally.
pub trait Environment {
    fn spec(&self) -> &EnvSpec;
    /// Start a new episode and return its first observation.
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> StepOutcome;
    /// Observation of the current state without stepping.
    fn observe(&self) -> Vec<f64>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_scale_and_bias_from_bounds() {
        let spec = EnvSpec {
            obs_dim: 1,
            action_dim: 2,
            dt: 0.1,
            episode_length: 10,
            action_low: vec![0.0, -3.0],
            action_high: vec![4.0, 3.0],
            goal_obs: vec![0.0],
            obs_norm: vec![1.0],
        };
        assert_eq!(spec.action_scale(), vec![2.0, 3.0]);
        assert_eq!(spec.action_bias(), vec![2.0, 0.0]);
    }

    #[test]
    fn normalized_distance_uses_component_scales() {
        let spec = EnvSpec {
            obs_dim: 2,
            action_dim: 1,
            dt: 0.1,
            episode_length: 10,
            action_low: vec![-1.0],
            action_high: vec![1.0],
            goal_obs: vec![0.0, 0.0],
            obs_norm: vec![2.0, 4.0],
        };
        let d = spec.normalized_distance(&[2.0, 0.0], &[0.0, 4.0]);
        assert!((d - 2.0f64.sqrt()).abs() < 1e-12);
    }
}
