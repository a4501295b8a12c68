//! Torque-limited pendulum swing-up with the classic gym dynamics.
//!
//! State (θ, θ̇) with θ kept in (−π, π] and |θ̇| ≤ 8. Upright is θ = 0.
//! Parameters g = 10, m = 1, l = 1, Δt = 0.05, torque limit ±2.

use rand::{Rng, RngCore};

use super::{EnvSpec, Environment, StepOutcome};

const G: f64 = 10.0;
const M: f64 = 1.0;
const L: f64 = 1.0;
const DT: f64 = 0.05;
const MAX_TORQUE: f64 = 2.0;
const MAX_SPEED: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
}

/// Wrap an angle into (−π, π].
fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    std::f64::consts::PI - (std::f64::consts::PI - x).rem_euclid(two_pi)
}

/// Observation [cos θ, sin θ, θ̇].
pub fn pendulum_obs(state: PendulumState) -> Vec<f64> {
    vec![state.theta.cos(), state.theta.sin(), state.theta_dot]
}

/// One dynamics step. Torque is clipped to ±2; the reward is charged on the
/// incoming state and the applied torque:
/// `r = −(wrap(θ)² + 0.1 θ̇² + 0.001 τ²)`.
pub fn pendulum_step(state: PendulumState, torque: f64) -> (PendulumState, f64) {
    let tau = torque.clamp(-MAX_TORQUE, MAX_TORQUE);
    let theta = state.theta;
    let theta_dot = state.theta_dot;

    let reward = -(wrap_angle(theta).powi(2) + 0.1 * theta_dot * theta_dot + 0.001 * tau * tau);

    let theta_ddot = (3.0 * G / (2.0 * L)) * theta.sin() + (3.0 / (M * L * L)) * tau;
    let new_theta_dot = (theta_dot + theta_ddot * DT).clamp(-MAX_SPEED, MAX_SPEED);
    let new_theta = wrap_angle(theta + new_theta_dot * DT);

    (
        PendulumState {
            theta: new_theta,
            theta_dot: new_theta_dot,
        },
        reward,
    )
}

#[derive(Debug, Clone)]
pub struct Pendulum {
    spec: EnvSpec,
    state: PendulumState,
    steps: usize,
}

impl Pendulum {
    pub fn new(episode_length: usize) -> Self {
        let spec = EnvSpec {
            obs_dim: 3,
            action_dim: 1,
            dt: DT,
            episode_length,
            action_low: vec![-MAX_TORQUE],
            action_high: vec![MAX_TORQUE],
            // Upright at rest: cos 0 = 1, sin 0 = 0, θ̇ = 0.
            goal_obs: vec![1.0, 0.0, 0.0],
            obs_norm: vec![1.0, 1.0, MAX_SPEED],
        };
        Self {
            spec,
            state: PendulumState {
                theta: std::f64::consts::PI,
                theta_dot: 0.0,
            },
            steps: 0,
        }
    }

    pub fn state(&self) -> PendulumState {
        self.state
    }

    /// Place the pendulum at an arbitrary state (grids, probes). Resets the
    /// step counter.
    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.state = PendulumState {
            theta: wrap_angle(theta),
            theta_dot: theta_dot.clamp(-MAX_SPEED, MAX_SPEED),
        };
        self.steps = 0;
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        let theta = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let theta_dot = rng.gen_range(-1.0..1.0);
        self.state = PendulumState { theta, theta_dot };
        self.steps = 0;
        pendulum_obs(self.state)
    }

    fn step(&mut self, action: &[f64]) -> StepOutcome {
        assert_eq!(action.len(), 1, "pendulum takes a single torque");
        let (next, reward) = pendulum_step(self.state, action[0]);
        self.state = next;
        self.steps += 1;
        StepOutcome {
            obs: pendulum_obs(self.state),
            reward,
            done: self.steps >= self.spec.episode_length,
        }
    }

    fn observe(&self) -> Vec<f64> {
        pendulum_obs(self.state)
    }
}
