//! Trainers: SAC and PPO, each with an optional Lyapunov decrease penalty in
//! the policy objective, sharing one deterministic RNG discipline.

pub mod ppo;
pub mod sac;

pub use ppo::{train_ppo_family, PpoTrainResult};
pub use sac::{train_sac_family, SacTrainResult};

use crate::checkpoint::{Checkpoint, CheckpointError, CheckpointMeta};
use crate::config::{EnvName, RunConfig};
use crate::envs::{
    default_reference, Environment, EnvError, EnvSpec, Pendulum, Quadrotor, QuadrotorParams,
    ReferenceTrajectory, RewardWeights,
};
use crate::lyapunov::LyapunovFunction;
use crate::nn::{NnError, SquashedGaussianPolicy};
use crate::report::RunReport;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::Path;

/// RNG stream ids. Every consumer owns one stream of the master seed, so
/// adding or removing a phase never shifts the draws another phase sees —
/// that's what makes β = 0 runs bitwise-equal to their unpenalized baseline.
pub mod streams {
    /// Environment resets.
    pub const ENV: u64 = 0;
    /// Exploration: warm-up actions and policy sampling during collection.
    pub const EXPLORE: u64 = 1;
    /// Minibatch indices (and epoch shuffles) for policy/value updates.
    pub const POLICY_BATCH: u64 = 2;
    /// Minibatch indices for Lyapunov fitting.
    pub const LYAPUNOV_BATCH: u64 = 3;
    /// Network initializations.
    pub const INIT_POLICY: u64 = 4;
    pub const INIT_Q: u64 = 5;
    pub const INIT_Q2: u64 = 6;
    pub const INIT_V: u64 = 7;
    pub const INIT_LYAPUNOV: u64 = 8;
    pub const INIT_VALUE: u64 = 9;
    /// Evaluation rollouts and certification batches.
    pub const EVAL: u64 = 10;
    /// Violation scans.
    pub const SCAN: u64 = 11;
    /// Gaussian noise consumed inside loss computations.
    pub const LOSS_NOISE: u64 = 12;
}

/// One named stream of the master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The streams a training loop consumes.
pub(crate) struct Rngs {
    pub env: ChaCha8Rng,
    pub explore: ChaCha8Rng,
    pub policy_batch: ChaCha8Rng,
    pub lyapunov_batch: ChaCha8Rng,
    pub eval: ChaCha8Rng,
    pub loss_noise: ChaCha8Rng,
}

impl Rngs {
    pub fn new(seed: u64) -> Self {
        Self {
            env: stream_rng(seed, streams::ENV),
            explore: stream_rng(seed, streams::EXPLORE),
            policy_batch: stream_rng(seed, streams::POLICY_BATCH),
            lyapunov_batch: stream_rng(seed, streams::LYAPUNOV_BATCH),
            eval: stream_rng(seed, streams::EVAL),
            loss_noise: stream_rng(seed, streams::LOSS_NOISE),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainErrorKind {
    #[error(transparent)]
    Optimizer(#[from] NnError),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// A training abort. Carries the rows logged so far, so callers can still
/// write a partial report before surfacing the failure.
#[derive(Debug)]
pub struct TrainError {
    pub step: u64,
    pub kind: TrainErrorKind,
    pub partial: RunReport,
}

impl std::fmt::Display for TrainError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training aborted at step {}: {}", self.step, self.kind)
    }
}

impl std::error::Error for TrainError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.kind)
    }
}

/// Instantiate the configured environment. The quadrotor tracks the CSV
/// reference when one is configured, else the built-in excitation trajectory.
pub fn build_env(cfg: &RunConfig) -> Result<Box<dyn Environment>, EnvError> {
    match cfg.env {
        EnvName::Pendulum => Ok(Box::new(Pendulum::new(cfg.resolved_episode_length()))),
        EnvName::Quadrotor => {
            let params = QuadrotorParams::default();
            let episode_length = cfg.resolved_episode_length();
            let reference = match &cfg.reference_path {
                Some(p) => ReferenceTrajectory::load(Path::new(p))?,
                None => default_reference(cfg.reference_steps.max(episode_length + 1), &params),
            };
            let weights = RewardWeights {
                position: cfg.quad_w_position,
                velocity: cfg.quad_w_velocity,
                attitude: cfg.quad_w_attitude,
                rate: cfg.quad_w_rate,
            };
            let env = Quadrotor::new(reference, episode_length, params, weights, cfg.quad_reset_noise)?;
            Ok(Box::new(env))
        }
    }
}

/// Fresh Lyapunov candidate for the configured algorithm, or None when the
/// algorithm doesn't train one.
pub fn build_lyapunov(cfg: &RunConfig, spec: &EnvSpec) -> Option<LyapunovFunction> {
    use crate::config::Algo;
    use crate::nn::{Activation, DenseNet};
    let h = cfg.hidden;
    let mut rng = stream_rng(cfg.seed, streams::INIT_LYAPUNOV);
    match cfg.algo {
        Algo::Sac | Algo::Ppo => None,
        Algo::Lsac | Algo::Lppo => {
            let net = DenseNet::new(
                &[spec.obs_dim + spec.action_dim, h, h, 1],
                Activation::Tanh,
                Activation::Identity,
                &mut rng,
            );
            Some(LyapunovFunction::new_state_action(
                net,
                cfg.mu,
                spec.dt,
                spec.goal_obs.clone(),
            ))
        }
        Algo::LppoOnpolicyRisk => {
            let net = DenseNet::new(
                &[spec.obs_dim, h, h, 1],
                Activation::Tanh,
                Activation::Identity,
                &mut rng,
            );
            Some(LyapunovFunction::new_state_only(
                net,
                cfg.mu,
                spec.dt,
                spec.goal_obs.clone(),
            ))
        }
    }
}

/// Rebuild the policy stored in a checkpoint, bound to the env's action box.
pub fn policy_from_checkpoint(
    ck: &Checkpoint,
    spec: &EnvSpec,
) -> Result<SquashedGaussianPolicy, CheckpointError> {
    let trunk = ck.net("policy")?;
    Ok(SquashedGaussianPolicy::new(
        trunk,
        spec.action_scale(),
        spec.action_bias(),
    ))
}

/// Rebuild the Lyapunov candidate stored in a checkpoint, if any. The kind is
/// recovered from the net's input width.
pub fn lyapunov_from_checkpoint(
    ck: &Checkpoint,
    cfg: &RunConfig,
    spec: &EnvSpec,
) -> Result<Option<LyapunovFunction>, CheckpointError> {
    if !ck.has_net("lyapunov") {
        return Ok(None);
    }
    let net = ck.net("lyapunov")?;
    let lf = if net.input_dim() == spec.obs_dim {
        LyapunovFunction::new_state_only(net, cfg.mu, spec.dt, spec.goal_obs.clone())
    } else if net.input_dim() == spec.obs_dim + spec.action_dim {
        LyapunovFunction::new_state_action(net, cfg.mu, spec.dt, spec.goal_obs.clone())
    } else {
        return Err(CheckpointError::BadNet {
            net: "lyapunov".into(),
            msg: format!(
                "input width {} matches neither the observation ({}) nor \
                 observation-action ({}) layout",
                net.input_dim(),
                spec.obs_dim,
                spec.obs_dim + spec.action_dim
            ),
        });
    };
    Ok(Some(lf))
}

pub(crate) fn checkpoint_meta(cfg: &RunConfig, step: u64) -> CheckpointMeta {
    CheckpointMeta {
        algo: cfg.algo.name().into(),
        env: cfg.env.name().into(),
        seed: cfg.seed,
        step,
    }
}

/// Uniform action inside the env's action box (warm-up exploration).
pub fn uniform_action<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> Vec<f64> {
    spec.action_low
        .iter()
        .zip(&spec.action_high)
        .map(|(&lo, &hi)| rng.gen_range(lo..hi))
        .collect()
}

/// `n × dim` standard-normal draws, taken sequentially so losses stay
/// deterministic however their batch loops are scheduled.
pub fn draw_noise<R: Rng + ?Sized>(rng: &mut R, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Did `count` cross a multiple of `interval` going from `before` to `after`?
pub(crate) fn crossed(interval: u64, before: u64, after: u64) -> bool {
    interval > 0 && before / interval < after / interval
}

pub(crate) fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}
