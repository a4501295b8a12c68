//! Quadrotor trajectory tracking.
//!
//! State: position p (m), unit quaternion q (scalar-first), velocity v (m/s),
//! body rates ω (rad/s). Action: collective thrust F_z along the body z-axis
//! plus commanded body rates, with a perfect low-level rate loop (ω is set
//! directly). Semi-implicit Euler at Δt = 0.02 with quaternion renormalization.
//!
//! The policy sees the 13-dimensional tracking error against a reference
//! trajectory: (p_e/5, q_e, v_e/5, ω_e/π) with q_e = q_ref⁻¹ ⊗ q.

use std::path::Path;

use rand::{Rng, RngCore};

use super::{EnvError, EnvSpec, Environment, StepOutcome};

/// Scalar-first unit-quaternion helpers on plain `[f64; 4]`.
pub mod quat {
    /// Hamilton product a ⊗ b.
    pub fn multiply(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
        let [aw, ax, ay, az] = a;
        let [bw, bx, by, bz] = b;
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    }

    /// Conjugate; the inverse for unit quaternions.
    pub fn conjugate(q: [f64; 4]) -> [f64; 4] {
        [q[0], -q[1], -q[2], -q[3]]
    }

    pub fn dot(a: [f64; 4], b: [f64; 4]) -> f64 {
        a.iter().zip(&b).map(|(x, y)| x * y).sum()
    }

    pub fn norm(q: [f64; 4]) -> f64 {
        dot(q, q).sqrt()
    }

    pub fn normalize(q: [f64; 4]) -> [f64; 4] {
        let n = norm(q);
        [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
    }

    /// Body z-axis in world frame: R(q)·e₃.
    pub fn rotate_e3(q: [f64; 4]) -> [f64; 3] {
        let [w, x, y, z] = q;
        [
            2.0 * (x * z + w * y),
            2.0 * (y * z - w * x),
            1.0 - 2.0 * (x * x + y * y),
        ]
    }

    /// Rotation of `angle` about a unit `axis`.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> [f64; 4] {
        let h = 0.5 * angle;
        let s = h.sin();
        [h.cos(), s * axis[0], s * axis[1], s * axis[2]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrotorState {
    pub p: [f64; 3],
    pub q: [f64; 4],
    pub v: [f64; 3],
    pub w: [f64; 3],
}

impl QuadrotorState {
    /// At rest, level, at `p`.
    pub fn hover_at(p: [f64; 3]) -> Self {
        Self {
            p,
            q: [1.0, 0.0, 0.0, 0.0],
            v: [0.0; 3],
            w: [0.0; 3],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().all(|x| x.is_finite())
            && self.q.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
            && self.w.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadrotorParams {
    pub mass: f64,
    pub gravity: f64,
    pub dt: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            gravity: 9.81,
            dt: 0.02,
        }
    }
}

impl QuadrotorParams {
    /// Thrust that exactly cancels gravity when level.
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn max_thrust(&self) -> f64 {
        2.0 * self.mass * self.gravity
    }
}

/// Reward weights on (position, velocity, attitude, body-rate) error terms.
#[derive(Debug, Clone, Copy)]
pub struct RewardWeights {
    pub position: f64,
    pub velocity: f64,
    pub attitude: f64,
    pub rate: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            position: 1.0,
            velocity: 0.1,
            attitude: 0.1,
            rate: 0.01,
        }
    }
}

/// One rigid-body step. Thrust clips to [0, 2mg], rate commands to ±π.
pub fn quadrotor_step(
    state: &QuadrotorState,
    action: &[f64],
    params: &QuadrotorParams,
) -> QuadrotorState {
    assert_eq!(action.len(), 4, "action is [thrust, wx, wy, wz]");
    let dt = params.dt;
    let fz = action[0].clamp(0.0, params.max_thrust());
    let w_cmd = [
        action[1].clamp(-std::f64::consts::PI, std::f64::consts::PI),
        action[2].clamp(-std::f64::consts::PI, std::f64::consts::PI),
        action[3].clamp(-std::f64::consts::PI, std::f64::consts::PI),
    ];

    let body_z = quat::rotate_e3(state.q);
    let accel = [
        body_z[0] * fz / params.mass,
        body_z[1] * fz / params.mass,
        body_z[2] * fz / params.mass - params.gravity,
    ];
    // Semi-implicit: position advances with the updated velocity.
    let v = [
        state.v[0] + dt * accel[0],
        state.v[1] + dt * accel[1],
        state.v[2] + dt * accel[2],
    ];
    let p = [
        state.p[0] + dt * v[0],
        state.p[1] + dt * v[1],
        state.p[2] + dt * v[2],
    ];
    // Perfect rate tracking; the new rates drive the attitude update.
    let w = w_cmd;
    let dq = quat::multiply(state.q, [0.0, w[0], w[1], w[2]]);
    let q = quat::normalize([
        state.q[0] + dt * 0.5 * dq[0],
        state.q[1] + dt * 0.5 * dq[1],
        state.q[2] + dt * 0.5 * dq[2],
        state.q[3] + dt * 0.5 * dq[3],
    ]);

    QuadrotorState { p, q, v, w }
}

/// Fixed observation scales: position and velocity errors in units of 5,
/// body-rate error in units of π. Constants (not running statistics) so that
/// certification regions mean the same thing in every run.
pub const POS_NORM: f64 = 5.0;
pub const VEL_NORM: f64 = 5.0;
pub const RATE_NORM: f64 = std::f64::consts::PI;

/// 13-dim tracking-error observation: (p_e/5, q_e, v_e/5, ω_e/π) with
/// q_e = q_ref⁻¹ ⊗ q, so `reference ⊗ q_e` recovers the state quaternion.
pub fn quadrotor_observe(state: &QuadrotorState, reference: &QuadrotorState) -> Vec<f64> {
    let q_e = quat::multiply(quat::conjugate(reference.q), state.q);
    let mut obs = Vec::with_capacity(13);
    for i in 0..3 {
        obs.push((state.p[i] - reference.p[i]) / POS_NORM);
    }
    obs.extend_from_slice(&q_e);
    for i in 0..3 {
        obs.push((state.v[i] - reference.v[i]) / VEL_NORM);
    }
    for i in 0..3 {
        obs.push((state.w[i] - reference.w[i]) / RATE_NORM);
    }
    obs
}

/// Negative weighted quadratic tracking cost on the normalized errors; the
/// attitude term is `1 − |⟨q, q_ref⟩|` (zero iff same attitude, sign-free).
fn tracking_reward(
    state: &QuadrotorState,
    reference: &QuadrotorState,
    weights: &RewardWeights,
) -> f64 {
    let sq = |x: f64| x * x;
    let p_err: f64 = (0..3)
        .map(|i| sq((state.p[i] - reference.p[i]) / POS_NORM))
        .sum();
    let v_err: f64 = (0..3)
        .map(|i| sq((state.v[i] - reference.v[i]) / VEL_NORM))
        .sum();
    let w_err: f64 = (0..3)
        .map(|i| sq((state.w[i] - reference.w[i]) / RATE_NORM))
        .sum();
    let q_err = 1.0 - quat::dot(state.q, reference.q).abs();
    -(weights.position * p_err
        + weights.velocity * v_err
        + weights.attitude * q_err
        + weights.rate * w_err)
}

/// A recorded state sequence with uniform time step.
#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    pub dt: f64,
    pub states: Vec<QuadrotorState>,
}

impl ReferenceTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Diagonal of the position bounding box; the yardstick for tracking
    /// error.
    pub fn bbox_diagonal(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for s in &self.states {
            for i in 0..3 {
                lo[i] = lo[i].min(s.p[i]);
                hi[i] = hi[i].max(s.p[i]);
            }
        }
        (0..3).map(|i| (hi[i] - lo[i]).powi(2)).sum::<f64>().sqrt()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz\n");
        for (i, s) in self.states.iter().enumerate() {
            let t = i as f64 * self.dt;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                t,
                s.p[0],
                s.p[1],
                s.p[2],
                s.q[0],
                s.q[1],
                s.q[2],
                s.q[3],
                s.v[0],
                s.v[1],
                s.v[2],
                s.w[0],
                s.w[1],
                s.w[2]
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, EnvError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(EnvError::EmptyTrajectory)?;
        if header.trim() != "t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz" {
            return Err(EnvError::Csv {
                line: 1,
                msg: format!("unexpected header {header:?}"),
            });
        }
        let mut states = Vec::new();
        let mut times = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|e| EnvError::Csv {
                        line: idx + 1,
                        msg: format!("{e} in field {f:?}"),
                    })
                })
                .collect::<Result<_, _>>()?;
            if fields.len() != 14 {
                return Err(EnvError::Csv {
                    line: idx + 1,
                    msg: format!("expected 14 fields, got {}", fields.len()),
                });
            }
            times.push(fields[0]);
            states.push(QuadrotorState {
                p: [fields[1], fields[2], fields[3]],
                q: [fields[4], fields[5], fields[6], fields[7]],
                v: [fields[8], fields[9], fields[10]],
                w: [fields[11], fields[12], fields[13]],
            });
        }
        if states.is_empty() {
            return Err(EnvError::EmptyTrajectory);
        }
        let dt = if times.len() >= 2 {
            times[1] - times[0]
        } else {
            QuadrotorParams::default().dt
        };
        for (i, w) in times.windows(2).enumerate() {
            if w[1] <= w[0] || ((w[1] - w[0]) - dt).abs() > 1e-9 {
                return Err(EnvError::Csv {
                    line: i + 3,
                    msg: "timestamps must increase uniformly".into(),
                });
            }
        }
        Ok(Self { dt, states })
    }

    pub fn save(&self, path: &Path) -> Result<(), EnvError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv(&text)
    }
}

/// Open-loop rollout recording the initial state and every post-step state
/// (`actions.len() + 1` entries). Fails on numerical blow-up.
pub fn generate_reference(
    initial: QuadrotorState,
    actions: &[Vec<f64>],
    params: &QuadrotorParams,
) -> Result<ReferenceTrajectory, EnvError> {
    let mut states = Vec::with_capacity(actions.len() + 1);
    states.push(initial);
    let mut s = initial;
    for (i, a) in actions.iter().enumerate() {
        s = quadrotor_step(&s, a, params);
        if !s.is_finite() {
            return Err(EnvError::NonFiniteState { step: i + 1 });
        }
        states.push(s);
    }
    Ok(ReferenceTrajectory {
        dt: params.dt,
        states,
    })
}

/// Default excitation reference: start at rest at (1, 0, 2), hover thrust plus
/// gentle cosine thrust/rate wobbles. Cosine phases keep the velocity terms
/// zero-mean, so the path stays within roughly a meter of the start.
pub fn default_reference(steps: usize, params: &QuadrotorParams) -> ReferenceTrajectory {
    let hover = params.hover_thrust();
    let actions: Vec<Vec<f64>> = (0..steps)
        .map(|i| {
            let t = i as f64 * params.dt;
            let two_pi = 2.0 * std::f64::consts::PI;
            vec![
                hover + 0.5 * (two_pi * 0.4 * t).cos(),
                0.10 * (two_pi * 1.0 * t).cos(),
                0.08 * (two_pi * 0.7 * t).cos(),
                0.30 * (two_pi * 0.5 * t).sin(),
            ]
        })
        .collect();
    generate_reference(QuadrotorState::hover_at([1.0, 0.0, 2.0]), &actions, params)
        .expect("bounded excitation cannot blow up")
}

/// Tracking environment around a [`ReferenceTrajectory`].
#[derive(Debug, Clone)]
pub struct Quadrotor {
    spec: EnvSpec,
    params: QuadrotorParams,
    weights: RewardWeights,
    reference: ReferenceTrajectory,
    state: QuadrotorState,
    step_index: usize,
    reset_pos_noise: f64,
}

impl Quadrotor {
    /// `episode_length` is capped by the reference length (one step consumes
    /// one reference interval).
    pub fn new(
        reference: ReferenceTrajectory,
        episode_length: usize,
        params: QuadrotorParams,
        weights: RewardWeights,
        reset_pos_noise: f64,
    ) -> Result<Self, EnvError> {
        if reference.is_empty() {
            return Err(EnvError::EmptyTrajectory);
        }
        let episode_length = episode_length.min(reference.len().saturating_sub(1));
        let mut goal_obs = vec![0.0; 13];
        goal_obs[3] = 1.0; // identity error quaternion
        let spec = EnvSpec {
            obs_dim: 13,
            action_dim: 4,
            dt: params.dt,
            episode_length,
            action_low: vec![
                0.0,
                -std::f64::consts::PI,
                -std::f64::consts::PI,
                -std::f64::consts::PI,
            ],
            action_high: vec![
                params.max_thrust(),
                std::f64::consts::PI,
                std::f64::consts::PI,
                std::f64::consts::PI,
            ],
            goal_obs,
            // Observations are pre-normalized; distances count components 1:1.
            obs_norm: vec![1.0; 13],
        };
        let state = reference.states[0];
        Ok(Self {
            spec,
            params,
            weights,
            reference,
            state,
            step_index: 0,
            reset_pos_noise,
        })
    }

    pub fn state(&self) -> &QuadrotorState {
        &self.state
    }

    pub fn reference(&self) -> &ReferenceTrajectory {
        &self.reference
    }

    pub fn params(&self) -> &QuadrotorParams {
        &self.params
    }

    /// Unnormalized position error against the current reference point.
    pub fn position_error(&self) -> [f64; 3] {
        let r = &self.reference.states[self.step_index];
        [
            self.state.p[0] - r.p[0],
            self.state.p[1] - r.p[1],
            self.state.p[2] - r.p[2],
        ]
    }
}

impl Environment for Quadrotor {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut s = self.reference.states[0];
        for i in 0..3 {
            s.p[i] += rng.gen_range(-self.reset_pos_noise..=self.reset_pos_noise);
        }
        self.state = s;
        self.step_index = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> StepOutcome {
        self.state = quadrotor_step(&self.state, action, &self.params);
        self.step_index += 1;
        let reference = &self.reference.states[self.step_index];
        StepOutcome {
            obs: quadrotor_observe(&self.state, reference),
            reward: tracking_reward(&self.state, reference, &self.weights),
            done: self.step_index >= self.spec.episode_length,
        }
    }

    fn observe(&self) -> Vec<f64> {
        quadrotor_observe(&self.state, &self.reference.states[self.step_index])
    }
}
