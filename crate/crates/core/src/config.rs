//! Flat run configuration: every hyperparameter in one JSON document, unknown
//! keys rejected, each field carrying a documented default. The fully-resolved
//! config is echoed into the run's output directory as its provenance record.

use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("override {key:?}: {msg}")]
    Override { key: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Sac,
    Lsac,
    Ppo,
    Lppo,
    /// LPPO variant training a state-only candidate with the older on-policy
    /// risk (baseline mode).
    LppoOnpolicyRisk,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Sac => "sac",
            Algo::Lsac => "lsac",
            Algo::Ppo => "ppo",
            Algo::Lppo => "lppo",
            Algo::LppoOnpolicyRisk => "lppo-onpolicy-risk",
        }
    }

    /// Off-policy (SAC-family) vs on-policy (PPO-family) training loop.
    pub fn is_sac_family(self) -> bool {
        matches!(self, Algo::Sac | Algo::Lsac)
    }

    /// Whether a Lyapunov candidate is trained at all.
    pub fn has_lyapunov(self) -> bool {
        !matches!(self, Algo::Sac | Algo::Ppo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvName {
    Pendulum,
    Quadrotor,
}

impl EnvName {
    pub fn name(self) -> &'static str {
        match self {
            EnvName::Pendulum => "pendulum",
            EnvName::Quadrotor => "quadrotor",
        }
    }
}

/// One run, fully specified. All numeric defaults are tuned for the native
/// environments here, not taken from any published table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Training algorithm. Default: lsac.
    pub algo: Algo,
    /// Environment. Default: pendulum.
    pub env: EnvName,
    /// Master seed; every RNG stream in the run derives from it. Default: 0.
    pub seed: u64,
    /// Total environment steps K. Default: 100_000.
    pub steps: u64,
    /// Discount γ. Default: 0.99.
    pub gamma: f64,
    /// Width of the two hidden layers in every network. Default: 64.
    pub hidden: usize,
    /// Lyapunov temperature β weighting the decrease penalty in the policy
    /// objective; 0 recovers the unaugmented algorithm exactly. Default: 1.0.
    pub beta: f64,
    /// Minimum decrease rate μ demanded during Lyapunov training. Default: 0.01.
    pub mu: f64,

    // SAC family ------------------------------------------------------------
    /// Polyak coefficient for the target value net. Default: 0.005.
    pub tau: f64,
    /// Fixed entropy temperature α. Default: 0.2.
    pub alpha: f64,
    /// Reserved target entropy H (α is fixed here); None → −action_dim.
    pub target_entropy: Option<f64>,
    /// Replay minibatch size. Default: 128.
    pub batch_size: usize,
    /// Replay capacity. Default: 1_000_000.
    pub buffer_capacity: usize,
    /// Uniform-random warm-up steps before any update. Default: 1000.
    pub learning_starts: usize,
    /// Train a second Q net and take the min (robustness variant; the default
    /// follows the single-Q formulation). Default: false.
    pub twin_q: bool,
    /// Lyapunov gradient steps per environment step (LSAC). Default: 1.
    pub lyapunov_steps: usize,
    /// Lyapunov minibatch size (LSAC). Default: 128.
    pub lyapunov_batch: usize,

    // PPO family ------------------------------------------------------------
    /// Clip range ε. Default: 0.2.
    pub clip: f64,
    /// GAE λ; 1.0 recovers the plain discounted-δ recursion. Default: 0.95.
    pub lambda: f64,
    /// Steps collected per iteration (N). Default: 2048.
    pub rollout_steps: usize,
    /// Optimization epochs per iteration. Default: 10.
    pub epochs: usize,
    /// Minibatch size within an epoch. Default: 64.
    pub minibatch: usize,
    /// Normalize advantages to zero mean / unit std per minibatch. Default: true.
    pub normalize_advantages: bool,
    /// Lyapunov gradient steps per iteration (LPPO). Default: 32.
    pub lyapunov_fit_steps: usize,

    // Learning rates ----------------------------------------------------------
    /// Default: 3e-4 each.
    pub lr_policy: f64,
    pub lr_q: f64,
    pub lr_v: f64,
    pub lr_lyapunov: f64,

    // Environment -------------------------------------------------------------
    /// Episode length override; None → 200 (pendulum) / 500 (quadrotor).
    pub episode_length: Option<usize>,
    /// Quadrotor reward weights on normalized error terms.
    /// Defaults: 1.0, 0.1, 0.1, 0.01.
    pub quad_w_position: f64,
    pub quad_w_velocity: f64,
    pub quad_w_attitude: f64,
    pub quad_w_rate: f64,
    /// Uniform position noise at quadrotor reset (m). Default: 0.25.
    pub quad_reset_noise: f64,
    /// CSV reference trajectory; None → built-in excitation reference.
    pub reference_path: Option<String>,
    /// Length of the generated built-in reference. Default: 500.
    pub reference_steps: usize,

    // Reporting / certification ------------------------------------------------
    /// Checkpoint every this many env steps (0 disables periodic ones).
    /// Default: 10_000.
    pub checkpoint_interval: u64,
    /// Emit an update row every this many gradient updates (SAC family).
    /// Default: 200.
    pub log_interval: u64,
    /// Evaluate certification risk every this many env steps (0 disables).
    /// Default: 5000.
    pub cert_interval: u64,
    /// Transitions in each certification batch. Default: 10_000.
    pub cert_batch: usize,
    /// Monte-Carlo samples for state-level Lyapunov values. Default: 16.
    pub mc_samples: usize,
    /// Episodes rolled out by violation scans. Default: 50.
    pub violation_episodes: usize,
    /// Method-(i) certificate threshold on certification risk. Default: 1e-3.
    pub cert_risk_threshold: f64,
    /// Method-(ii) bound on the violation fraction. Default: 0.05.
    pub cert_violation_threshold: f64,
    /// Method-(ii) radius (normalized units) confining violations near the
    /// goal. Default: 0.5.
    pub cert_radius: f64,
    /// Output directory; None → current directory (CLI may override via
    /// LYACERT_OUT).
    pub out_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Lsac,
            env: EnvName::Pendulum,
            seed: 0,
            steps: 100_000,
            gamma: 0.99,
            hidden: 64,
            beta: 1.0,
            mu: 0.01,
            tau: 0.005,
            alpha: 0.2,
            target_entropy: None,
            batch_size: 128,
            buffer_capacity: 1_000_000,
            learning_starts: 1000,
            twin_q: false,
            lyapunov_steps: 1,
            lyapunov_batch: 128,
            clip: 0.2,
            lambda: 0.95,
            rollout_steps: 2048,
            epochs: 10,
            minibatch: 64,
            normalize_advantages: true,
            lyapunov_fit_steps: 32,
            lr_policy: 3e-4,
            lr_q: 3e-4,
            lr_v: 3e-4,
            lr_lyapunov: 3e-4,
            episode_length: None,
            quad_w_position: 1.0,
            quad_w_velocity: 0.1,
            quad_w_attitude: 0.1,
            quad_w_rate: 0.01,
            quad_reset_noise: 0.25,
            reference_path: None,
            reference_steps: 500,
            checkpoint_interval: 10_000,
            log_interval: 200,
            cert_interval: 5000,
            cert_batch: 10_000,
            mc_samples: 16,
            violation_episodes: 50,
            cert_risk_threshold: 1e-3,
            cert_violation_threshold: 0.05,
            cert_radius: 0.5,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Apply `--key value` overrides. Values are parsed as JSON when possible
    /// (numbers, booleans, null) and fall back to strings, so
    /// `--algo lsac --steps 5000` both work. Unknown keys and type mismatches
    /// are rejected.
    pub fn with_overrides(&self, pairs: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let map = value.as_object_mut().expect("config is an object");
        for (key, raw) in pairs {
            if !map.contains_key(key) {
                return Err(ConfigError::Override {
                    key: key.clone(),
                    msg: "unknown config key".into(),
                });
            }
            let parsed: serde_json::Value = serde_json::from_str(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
            map.insert(key.clone(), parsed);
        }
        let cfg: RunConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must be in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must be in [0, 1]");
        }
        if self.beta < 0.0 || self.mu < 0.0 || self.alpha < 0.0 {
            return bad("beta, mu, alpha must be non-negative");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must be in (0, 1]");
        }
        if self.hidden == 0 {
            return bad("hidden width must be positive");
        }
        if self.batch_size == 0 || self.lyapunov_batch == 0 || self.minibatch == 0 {
            return bad("batch sizes must be positive");
        }
        if self.minibatch > self.rollout_steps {
            return bad("minibatch cannot exceed rollout_steps");
        }
        if self.epochs == 0 || self.rollout_steps == 0 {
            return bad("epochs and rollout_steps must be positive");
        }
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity must be positive");
        }
        for (name, lr) in [
            ("lr_policy", self.lr_policy),
            ("lr_q", self.lr_q),
            ("lr_v", self.lr_v),
            ("lr_lyapunov", self.lr_lyapunov),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        if let Some(len) = self.episode_length {
            if len == 0 {
                return bad("episode_length must be positive");
            }
        }
        if self.cert_batch == 0 || self.mc_samples == 0 {
            return bad("cert_batch and mc_samples must be positive");
        }
        Ok(())
    }

    /// Episode length after applying the per-env default.
    pub fn resolved_episode_length(&self) -> usize {
        self.episode_length.unwrap_or(match self.env {
            EnvName::Pendulum => 200,
            EnvName::Quadrotor => 500,
        })
    }
}
