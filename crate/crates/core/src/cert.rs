//! Post-hoc analysis of a trained policy / Lyapunov-candidate pair:
//! deterministic policy evaluation, Lie-derivative violation scans over fresh
//! closed-loop rollouts, phase-plane level-set export, and the two
//! certificate checks (risk convergence; almost-Lyapunov violation bounds).

use std::f64::consts::PI;
use std::path::Path;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::buffers::Transition;
use crate::config::RunConfig;
use crate::envs::{pendulum_obs, Environment, PendulumState};
use crate::lyapunov::{LyapunovFunction, LyapunovKind};
use crate::nn::SquashedGaussianPolicy;
use crate::par;

#[derive(Debug, thiserror::Error)]
pub enum CertError {
    #[error("policy evaluation needs at least one episode")]
    NoEpisodes,
    #[error("certification over an empty transition batch")]
    EmptyBatch,
    #[error("degenerate grid on the {axis} axis: {msg}")]
    DegenerateGrid { axis: &'static str, msg: String },
    #[error("cannot write analysis output: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-episode returns and terminal goal errors under the deterministic
/// (squashed-mean) policy. Randomness enters only through episode resets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_return: f64,
    /// Population standard deviation of the returns.
    pub std_return: f64,
    /// Mean normalized distance between the final observation and the goal.
    pub mean_final_distance: f64,
    pub returns: Vec<f64>,
    pub final_distances: Vec<f64>,
}

/// Roll out `episodes` episodes with mean actions and summarize them.
pub fn evaluate_policy(
    env: &mut dyn Environment,
    policy: &SquashedGaussianPolicy,
    episodes: usize,
    rng: &mut dyn RngCore,
) -> Result<EvalSummary, CertError> {
    if episodes == 0 {
        return Err(CertError::NoEpisodes);
    }
    let mut returns = Vec::with_capacity(episodes);
    let mut final_distances = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset(rng);
        let mut episode_return = 0.0;
        loop {
            let action = policy.mean_action(&obs);
            let out = env.step(&action);
            episode_return += out.reward;
            obs = out.obs;
            if out.done {
                break;
            }
        }
        let spec = env.spec();
        final_distances.push(spec.normalized_distance(&obs, &spec.goal_obs));
        returns.push(episode_return);
    }
    let n = episodes as f64;
    let mean_return = returns.iter().sum::<f64>() / n;
    let var = returns
        .iter()
        .map(|r| (r - mean_return) * (r - mean_return))
        .sum::<f64>()
        / n;
    let mean_final_distance = final_distances.iter().sum::<f64>() / n;
    Ok(EvalSummary {
        episodes,
        mean_return,
        std_return: var.sqrt(),
        mean_final_distance,
        returns,
        final_distances,
    })
}

/// One sampled transition of a violation scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPoint {
    /// Observation the transition started from.
    pub state: Vec<f64>,
    pub lie: f64,
    pub violation: bool,
}

/// Lie-derivative sign census over fresh closed-loop rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    /// Transitions sampled across all episodes.
    pub total: usize,
    /// Transitions with a strictly positive Lie derivative.
    pub violations: usize,
    /// violations / total (0 when nothing was sampled).
    pub fraction: f64,
    /// Observations at which a violation started.
    pub violating_states: Vec<Vec<f64>>,
    /// Lie derivatives of those transitions, aligned with `violating_states`.
    pub violating_lie: Vec<f64>,
    /// Mean Lie derivative over every sampled transition, violating or not.
    pub mean_lie: f64,
    /// Largest Lie derivative over every sampled transition.
    pub max_lie: f64,
    /// Every sampled transition, for scatter plots of trajectories with the
    /// violations marked. Kept out of the JSON; export it with `to_csv`.
    #[serde(skip)]
    pub trace: Vec<ScanPoint>,
}

impl ViolationReport {
    /// CSV of every sampled transition: `lie,violation,s0,..,s{obs_dim-1}`,
    /// one row per entry of `trace` (violation as 0/1).
    pub fn to_csv(&self, obs_dim: usize) -> String {
        let mut csv = String::from("lie,violation");
        for d in 0..obs_dim {
            csv.push_str(&format!(",s{d}"));
        }
        csv.push('\n');
        for point in &self.trace {
            csv.push_str(&format!("{},{}", point.lie, u8::from(point.violation)));
            for x in &point.state {
                csv.push_str(&format!(",{x}"));
            }
            csv.push('\n');
        }
        csv
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("violation report JSON")
    }
}

/// Roll out episodes under the mean policy and count transitions whose Lie
/// derivative is strictly positive. The recorded state of a violation is the
/// observation the transition started from.
pub fn violation_scan(
    env: &mut dyn Environment,
    policy: &SquashedGaussianPolicy,
    lyapunov: &LyapunovFunction,
    episodes: usize,
    rng: &mut dyn RngCore,
) -> ViolationReport {
    let mut trace = Vec::new();
    let mut violating_states = Vec::new();
    let mut violating_lie = Vec::new();
    let mut sum_lie = 0.0;
    let mut max_lie = f64::NEG_INFINITY;
    for _ in 0..episodes {
        let mut obs = env.reset(rng);
        loop {
            let action = policy.mean_action(&obs);
            let out = env.step(&action);
            let lie = lyapunov.lie_derivative(&obs, &action, &out.obs, policy);
            sum_lie += lie;
            max_lie = max_lie.max(lie);
            let violation = lie > 0.0;
            if violation {
                violating_states.push(obs.clone());
                violating_lie.push(lie);
            }
            trace.push(ScanPoint {
                state: std::mem::take(&mut obs),
                lie,
                violation,
            });
            obs = out.obs;
            if out.done {
                break;
            }
        }
    }
    let total = trace.len();
    let violations = violating_states.len();
    ViolationReport {
        total,
        violations,
        fraction: if total == 0 {
            0.0
        } else {
            violations as f64 / total as f64
        },
        violating_states,
        violating_lie,
        mean_lie: if total == 0 { 0.0 } else { sum_lie / total as f64 },
        max_lie: if total == 0 { 0.0 } else { max_lie },
        trace,
    }
}

/// Axis-aligned evaluation grid over the pendulum phase plane (θ, θ̇).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub theta_min: f64,
    pub theta_max: f64,
    pub n_theta: usize,
    pub theta_dot_min: f64,
    pub theta_dot_max: f64,
    pub n_theta_dot: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            theta_min: -PI,
            theta_max: PI,
            n_theta: 101,
            theta_dot_min: -8.0,
            theta_dot_max: 8.0,
            n_theta_dot: 101,
        }
    }
}

fn axis_points(lo: f64, hi: f64, n: usize, axis: &'static str) -> Result<Vec<f64>, CertError> {
    if n == 0 {
        return Err(CertError::DegenerateGrid {
            axis,
            msg: "zero points".into(),
        });
    }
    if n == 1 {
        // Single probe at the span midpoint (a point query, not a grid).
        return Ok(vec![0.5 * (lo + hi)]);
    }
    if !(hi > lo) {
        return Err(CertError::DegenerateGrid {
            axis,
            msg: format!("{n} points over the empty span [{lo}, {hi}]"),
        });
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n).map(|i| lo + step * i as f64).collect())
}

/// Lyapunov state values over a (θ, θ̇) grid, row-major in θ.
#[derive(Debug, Clone)]
pub struct LevelSetGrid {
    pub thetas: Vec<f64>,
    pub theta_dots: Vec<f64>,
    /// values[i][j] = value at (thetas[i], theta_dots[j]).
    pub values: Vec<Vec<f64>>,
}

impl LevelSetGrid {
    /// Grid indices of the smallest value.
    pub fn argmin(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_val = f64::INFINITY;
        for (i, row) in self.values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v < best_val {
                    best_val = v;
                    best = (i, j);
                }
            }
        }
        best
    }

    /// (θ, θ̇) of the smallest value.
    pub fn min_location(&self) -> (f64, f64) {
        let (i, j) = self.argmin();
        (self.thetas[i], self.theta_dots[j])
    }

    pub fn to_csv(&self) -> String {
        let mut csv = String::from("theta,theta_dot,L\n");
        for (i, theta) in self.thetas.iter().enumerate() {
            for (j, theta_dot) in self.theta_dots.iter().enumerate() {
                csv.push_str(&format!("{theta},{theta_dot},{}\n", self.values[i][j]));
            }
        }
        csv
    }

    pub fn save(&self, path: &Path) -> Result<(), CertError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Evaluate the candidate's state value over a phase-plane grid. State-action
/// candidates are averaged over `mc_samples` policy actions per cell; the
/// Monte-Carlo noise is pre-drawn sequentially so the sweep itself is a pure
/// parallel map.
pub fn level_set_grid(
    lyapunov: &LyapunovFunction,
    policy: &SquashedGaussianPolicy,
    grid: &GridSpec,
    mc_samples: usize,
    rng: &mut dyn RngCore,
) -> Result<LevelSetGrid, CertError> {
    let thetas = axis_points(grid.theta_min, grid.theta_max, grid.n_theta, "theta")?;
    let theta_dots = axis_points(
        grid.theta_dot_min,
        grid.theta_dot_max,
        grid.n_theta_dot,
        "theta_dot",
    )?;

    let cells: Vec<(f64, f64)> = thetas
        .iter()
        .flat_map(|&th| theta_dots.iter().map(move |&thd| (th, thd)))
        .collect();
    let noise: Vec<Vec<Vec<f64>>> = match lyapunov.kind {
        LyapunovKind::StateOnly => Vec::new(),
        LyapunovKind::StateAction => {
            assert!(mc_samples > 0, "state-action level sets need MC samples");
            let action_dim = lyapunov.net.input_dim() - lyapunov.goal_obs.len();
            (0..cells.len())
                .map(|_| {
                    (0..mc_samples)
                        .map(|_| {
                            (0..action_dim)
                                .map(|_| StandardNormal.sample(&mut *rng))
                                .collect()
                        })
                        .collect()
                })
                .collect()
        }
    };

    let items: Vec<(usize, f64, f64)> = cells
        .iter()
        .enumerate()
        .map(|(k, &(th, thd))| (k, th, thd))
        .collect();
    let flat = par::map_collect(&items, |&(k, theta, theta_dot)| {
        let obs = pendulum_obs(PendulumState { theta, theta_dot });
        match lyapunov.kind {
            LyapunovKind::StateOnly => lyapunov.value_state(&obs),
            LyapunovKind::StateAction => {
                let head = policy.head(&obs);
                let mut acc = 0.0;
                for sample_noise in &noise[k] {
                    let sample = policy.sample_from_noise(&head, sample_noise);
                    acc += lyapunov.value_state_action(&obs, &sample.action);
                }
                acc / mc_samples as f64
            }
        }
    });

    let n_thd = theta_dots.len();
    let values = flat.chunks(n_thd).map(|row| row.to_vec()).collect();
    Ok(LevelSetGrid {
        thetas,
        theta_dots,
        values,
    })
}

/// Collect a fresh batch of `n` transitions by rolling the stochastic policy
/// (full episodes are taken until the count is reached, matching the data
/// distribution the candidate was trained on).
pub fn collect_batch(
    env: &mut dyn Environment,
    policy: &SquashedGaussianPolicy,
    n: usize,
    rng: &mut dyn RngCore,
) -> Vec<Transition> {
    let mut batch = Vec::with_capacity(n);
    while batch.len() < n {
        let mut obs = env.reset(rng);
        loop {
            let sample = policy.sample(&obs, rng);
            let out = env.step(&sample.action);
            batch.push(Transition {
                s: std::mem::take(&mut obs),
                a: sample.action,
                r: out.reward,
                s_next: out.obs.clone(),
                done: out.done,
            });
            obs = out.obs;
            if out.done || batch.len() == n {
                break;
            }
        }
    }
    batch
}

/// Pass/fail thresholds for the two certificate checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertThresholds {
    /// Check (i): certification risk on a fresh batch must fall below this.
    pub risk: f64,
    /// Check (ii): tolerated fraction of Lie-derivative violations.
    pub violation_fraction: f64,
    /// Check (ii): normalized goal distance every violating state must stay
    /// inside.
    pub radius: f64,
}

impl Default for CertThresholds {
    fn default() -> Self {
        Self {
            risk: 1e-3,
            violation_fraction: 0.05,
            radius: 0.5,
        }
    }
}

impl CertThresholds {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            risk: cfg.cert_risk_threshold,
            violation_fraction: cfg.cert_violation_threshold,
            radius: cfg.cert_radius,
        }
    }
}

/// Outcome of both certificate checks on a trained pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateVerdict {
    /// Certification risk (μ = 0) on the fresh batch.
    pub certification_risk: f64,
    pub risk_threshold: f64,
    /// Check (i): the risk converged below the threshold.
    pub risk_converged: bool,
    pub violation_fraction: f64,
    pub violation_threshold: f64,
    /// Normalized goal-ball radius violations must stay inside.
    pub radius: f64,
    /// Largest normalized goal distance among violating states (0 when none).
    pub max_violation_distance: f64,
    /// Check (ii): violations are rare and confined near the equilibrium.
    pub almost_lyapunov: bool,
    /// Either check succeeded.
    pub certified: bool,
}

impl CertificateVerdict {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdict JSON")
    }
}

/// Run both certificate checks: (i) certification risk on `fresh_batch` below
/// `thresholds.risk`; (ii) strictly positive Lie derivatives over fresh
/// rollouts rarer than `thresholds.violation_fraction` with every violating
/// state inside the normalized goal ball of `thresholds.radius`. Returns the
/// verdict together with the scan that produced the violation statistics.
pub fn certify(
    env: &mut dyn Environment,
    policy: &SquashedGaussianPolicy,
    lyapunov: &LyapunovFunction,
    fresh_batch: &[Transition],
    episodes: usize,
    thresholds: &CertThresholds,
    rng: &mut dyn RngCore,
) -> Result<(CertificateVerdict, ViolationReport), CertError> {
    if fresh_batch.is_empty() {
        return Err(CertError::EmptyBatch);
    }
    let certification_risk = match lyapunov.kind {
        LyapunovKind::StateAction => lyapunov.certification_risk(fresh_batch, policy),
        LyapunovKind::StateOnly => lyapunov.on_policy_risk(fresh_batch),
    };
    let scan = violation_scan(env, policy, lyapunov, episodes, rng);
    let spec = env.spec();
    let max_violation_distance = scan
        .violating_states
        .iter()
        .map(|s| spec.normalized_distance(s, &spec.goal_obs))
        .fold(0.0, f64::max);
    let risk_converged = certification_risk < thresholds.risk;
    let almost_lyapunov = scan.fraction < thresholds.violation_fraction
        && max_violation_distance < thresholds.radius;
    let verdict = CertificateVerdict {
        certification_risk,
        risk_threshold: thresholds.risk,
        risk_converged,
        violation_fraction: scan.fraction,
        violation_threshold: thresholds.violation_fraction,
        radius: thresholds.radius,
        max_violation_distance,
        almost_lyapunov,
        certified: risk_converged || almost_lyapunov,
    };
    Ok((verdict, scan))
}
