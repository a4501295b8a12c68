//! Soft actor-critic (value-function variant: policy, Q, V, target V) and its
//! Lyapunov-penalized form. The penalty adds β·mean[max(0, lie + μ)] to the
//! policy objective, differentiated through the mean action at the successor
//! state; β = 0 recovers plain SAC bit for bit.

use super::{
    all_finite, checkpoint_meta, crossed, draw_noise, stream_rng, streams, uniform_action, Rngs,
    TrainError, TrainErrorKind,
};
use crate::buffers::{ReplayBuffer, Transition};
use crate::checkpoint::Checkpoint;
use crate::config::{Algo, RunConfig};
use crate::envs::{Environment, EnvSpec};
use crate::lyapunov::LyapunovFunction;
use crate::nn::{adam_step, AdamState, Activation, DenseNet, Gradients, SquashedGaussianPolicy};
use crate::par;
use crate::report::{ReportRow, RunReport};
use std::path::Path;

pub struct SacAgent {
    pub policy: SquashedGaussianPolicy,
    /// State-action critic; `q2` is the optional twin (min over both is used).
    pub q: DenseNet,
    pub q2: Option<DenseNet>,
    pub v: DenseNet,
    /// Polyak-tracked copy of `v` providing the bootstrap target.
    pub v_target: DenseNet,
    pub gamma: f64,
    pub alpha: f64,
    pub tau: f64,
    /// Reserved for temperature auto-tuning; α stays fixed in this trainer.
    pub target_entropy: f64,
}

impl SacAgent {
    pub fn new(spec: &EnvSpec, cfg: &RunConfig) -> Self {
        let h = cfg.hidden;
        let (n_s, n_a) = (spec.obs_dim, spec.action_dim);
        let trunk = DenseNet::new(
            &[n_s, h, h, 2 * n_a],
            Activation::Relu,
            Activation::Identity,
            &mut stream_rng(cfg.seed, streams::INIT_POLICY),
        );
        let policy = SquashedGaussianPolicy::new(trunk, spec.action_scale(), spec.action_bias());
        let q_sizes = [n_s + n_a, h, h, 1];
        let q = DenseNet::new(
            &q_sizes,
            Activation::Relu,
            Activation::Identity,
            &mut stream_rng(cfg.seed, streams::INIT_Q),
        );
        let q2 = cfg.twin_q.then(|| {
            DenseNet::new(
                &q_sizes,
                Activation::Relu,
                Activation::Identity,
                &mut stream_rng(cfg.seed, streams::INIT_Q2),
            )
        });
        let v = DenseNet::new(
            &[n_s, h, h, 1],
            Activation::Relu,
            Activation::Identity,
            &mut stream_rng(cfg.seed, streams::INIT_V),
        );
        let v_target = v.clone();
        Self {
            policy,
            q,
            q2,
            v,
            v_target,
            gamma: cfg.gamma,
            alpha: cfg.alpha,
            tau: cfg.tau,
            target_entropy: cfg
                .target_entropy
                .unwrap_or(-(spec.action_dim as f64)),
        }
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

pub struct SacValueLosses {
    pub j_q: f64,
    pub j_q2: Option<f64>,
    pub j_v: f64,
    pub q_grads: Gradients,
    pub q2_grads: Option<Gradients>,
    pub v_grads: Gradients,
}

struct ValueAcc {
    j_q: f64,
    j_q2: f64,
    j_v: f64,
    g_q: Gradients,
    g_q2: Option<Gradients>,
    g_v: Gradients,
}

impl ValueAcc {
    fn zeros(agent: &SacAgent) -> Self {
        Self {
            j_q: 0.0,
            j_q2: 0.0,
            j_v: 0.0,
            g_q: Gradients::zeros_like(&agent.q),
            g_q2: agent.q2.as_ref().map(Gradients::zeros_like),
            g_v: Gradients::zeros_like(&agent.v),
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.j_q += other.j_q;
        self.j_q2 += other.j_q2;
        self.j_v += other.j_v;
        self.g_q.add(&other.g_q);
        if let (Some(a), Some(b)) = (self.g_q2.as_mut(), other.g_q2.as_ref()) {
            a.add(b);
        }
        self.g_v.add(&other.g_v);
        self
    }
}

/// Critic and value losses over one minibatch:
///   J_Q = mean ½ (Q(s,a) − [r + γ(1−done)·V̄(s′)])²
///   J_V = mean ½ (V(s) − [Q(s,ã) − α·log π(ã|s)])²,  ã reparameterized fresh.
/// `noise` supplies the standard-normal draws behind ã, one row per item.
pub fn sac_value_losses(
    agent: &SacAgent,
    batch: &[Transition],
    noise: &[Vec<f64>],
) -> SacValueLosses {
    assert_eq!(batch.len(), noise.len());
    assert!(!batch.is_empty());
    let n = batch.len() as f64;
    let items: Vec<(&Transition, &Vec<f64>)> = batch.iter().zip(noise).collect();

    let acc = par::chunked_fold(
        &items,
        || ValueAcc::zeros(agent),
        |mut acc: ValueAcc, &(t, noise_i): &(&Transition, &Vec<f64>)| {
            let not_done = 1.0 - f64::from(t.done);
            let target = t.r + agent.gamma * not_done * agent.v_target.forward_scalar(&t.s_next);

            let sa = concat(&t.s, &t.a);
            let q_cache = agent.q.forward_cached(&sa);
            let resid_q = q_cache.output()[0] - target;
            acc.j_q += 0.5 * resid_q * resid_q / n;
            agent.q.backward_acc(&q_cache, &[resid_q / n], &mut acc.g_q);

            if let (Some(q2), Some(g_q2)) = (agent.q2.as_ref(), acc.g_q2.as_mut()) {
                let q2_cache = q2.forward_cached(&sa);
                let resid = q2_cache.output()[0] - target;
                acc.j_q2 += 0.5 * resid * resid / n;
                q2.backward_acc(&q2_cache, &[resid / n], g_q2);
            }

            // Soft value regression target under a fresh on-policy action.
            let head = agent.policy.head(&t.s);
            let sample = agent.policy.sample_from_noise(&head, noise_i);
            let s_pi = concat(&t.s, &sample.action);
            let mut q_pi = agent.q.forward_scalar(&s_pi);
            if let Some(q2) = agent.q2.as_ref() {
                q_pi = q_pi.min(q2.forward_scalar(&s_pi));
            }
            let v_target_val = q_pi - agent.alpha * sample.log_prob;

            let v_cache = agent.v.forward_cached(&t.s);
            let resid_v = v_cache.output()[0] - v_target_val;
            acc.j_v += 0.5 * resid_v * resid_v / n;
            agent.v.backward_acc(&v_cache, &[resid_v / n], &mut acc.g_v);
            acc
        },
        ValueAcc::merge,
    );

    SacValueLosses {
        j_q: acc.j_q,
        j_q2: agent.q2.as_ref().map(|_| acc.j_q2),
        j_v: acc.j_v,
        q_grads: acc.g_q,
        q2_grads: acc.g_q2,
        v_grads: acc.g_v,
    }
}

pub struct SacPolicyLoss {
    /// Full minimized objective (entropy-regularized value plus any penalty).
    pub loss: f64,
    /// The β-weighted decrease penalty included in `loss`.
    pub penalty: f64,
    pub grads: Gradients,
}

/// J_π = mean[α·log π(ã|s) − Q(s,ã)] with reparameterized ã.
pub fn sac_policy_loss(
    agent: &SacAgent,
    batch: &[Transition],
    noise: &[Vec<f64>],
) -> SacPolicyLoss {
    policy_loss_impl(agent, batch, noise, None)
}

/// SAC policy objective plus β·mean[max(0, lie + μ)], where the Lie term's
/// successor action is the policy's mean action (gradient flows through it).
/// β = 0 short-circuits to `sac_policy_loss` — same arithmetic, bit for bit.
pub fn lsac_policy_loss(
    agent: &SacAgent,
    lyapunov: &LyapunovFunction,
    beta: f64,
    batch: &[Transition],
    noise: &[Vec<f64>],
) -> SacPolicyLoss {
    if beta == 0.0 {
        return policy_loss_impl(agent, batch, noise, None);
    }
    policy_loss_impl(agent, batch, noise, Some((lyapunov, beta)))
}

fn policy_loss_impl(
    agent: &SacAgent,
    batch: &[Transition],
    noise: &[Vec<f64>],
    penalty: Option<(&LyapunovFunction, f64)>,
) -> SacPolicyLoss {
    assert_eq!(batch.len(), noise.len());
    assert!(!batch.is_empty());
    let n = batch.len() as f64;
    let m = agent.policy.action_dim();
    let items: Vec<(&Transition, &Vec<f64>)> = batch.iter().zip(noise).collect();

    let (loss, pen_total, grads) = par::chunked_fold(
        &items,
        || (0.0, 0.0, Gradients::zeros_like(&agent.policy.trunk)),
        |mut acc: (f64, f64, Gradients), &(t, noise_i): &(&Transition, &Vec<f64>)| {
            let head = agent.policy.head(&t.s);
            let sample = agent.policy.sample_from_noise(&head, noise_i);
            let sa = concat(&t.s, &sample.action);

            // Q and dQ/da through whichever critic attains the min.
            let q_cache = agent.q.forward_cached(&sa);
            let q1 = q_cache.output()[0];
            let (q_val, dq_da) = match agent.q2.as_ref() {
                Some(q2) => {
                    let q2_cache = q2.forward_cached(&sa);
                    let q2v = q2_cache.output()[0];
                    if q1 <= q2v {
                        (q1, agent.q.input_gradient(&q_cache, &[1.0]))
                    } else {
                        (q2v, q2.input_gradient(&q2_cache, &[1.0]))
                    }
                }
                None => (q1, agent.q.input_gradient(&q_cache, &[1.0])),
            };
            let dq_da = &dq_da[t.s.len()..];

            let term = (agent.alpha * sample.log_prob - q_val) / n;
            acc.0 += term;

            let rg = agent.policy.reparam_grads(&head, &sample);
            let d_mean: Vec<f64> = (0..m)
                .map(|i| (agent.alpha * rg.dlogp_dmean[i] - dq_da[i] * rg.daction_dmean[i]) / n)
                .collect();
            let d_log_std: Vec<f64> = (0..m)
                .map(|i| {
                    (agent.alpha * rg.dlogp_dlog_std[i] - dq_da[i] * rg.daction_dlog_std[i]) / n
                })
                .collect();
            agent.policy.backward_head(&head, &d_mean, &d_log_std, &mut acc.2);

            if let Some((lf, beta)) = penalty {
                // Decrease penalty: lie = (L(s′, π_mean(s′)) − L(s, a)) / Δt,
                // hinged at −μ. Only the successor action carries gradient.
                let head_next = agent.policy.head(&t.s_next);
                let a_next = agent.policy.squash(&head_next.mean);
                let l_now = lf.value_state_action(&t.s, &t.a);
                let next_in = concat(&t.s_next, &a_next);
                let l_cache = lf.net.forward_cached(&next_in);
                let lie = (l_cache.output()[0] - l_now) / lf.dt;
                if lie + lf.mu > 0.0 {
                    let pterm = beta * (lie + lf.mu) / n;
                    acc.0 += pterm;
                    acc.1 += pterm;
                    let dl = lf.net.input_gradient(&l_cache, &[1.0]);
                    let dl_da = &dl[t.s_next.len()..];
                    let da_dmean = agent.policy.mean_action_grads(&head_next);
                    let coef = beta / (lf.dt * n);
                    let d_mean_next: Vec<f64> =
                        (0..m).map(|i| coef * dl_da[i] * da_dmean[i]).collect();
                    let zeros = vec![0.0; m];
                    agent
                        .policy
                        .backward_head(&head_next, &d_mean_next, &zeros, &mut acc.2);
                }
            }
            acc
        },
        |mut a, b| {
            a.0 += b.0;
            a.1 += b.1;
            a.2.add(&b.2);
            a
        },
    );

    SacPolicyLoss { loss, penalty: pen_total, grads }
}

/// Snapshot every net (and the candidate, when present) under stable names.
pub fn sac_checkpoint(
    agent: &SacAgent,
    lyapunov: Option<&LyapunovFunction>,
    cfg: &RunConfig,
    step: u64,
) -> Checkpoint {
    let mut ck = Checkpoint::new(checkpoint_meta(cfg, step));
    ck.insert_net("policy", &agent.policy.trunk);
    ck.insert_net("q", &agent.q);
    if let Some(q2) = agent.q2.as_ref() {
        ck.insert_net("q2", q2);
    }
    ck.insert_net("v", &agent.v);
    ck.insert_net("v_target", &agent.v_target);
    if let Some(lf) = lyapunov {
        ck.insert_net("lyapunov", &lf.net);
    }
    ck
}

pub struct SacTrainResult {
    pub agent: SacAgent,
    pub lyapunov: Option<LyapunovFunction>,
    pub report: RunReport,
}

/// Off-policy training: uniform warm-up, then one Lyapunov fit phase and one
/// policy/critic phase per environment step. `algo = sac` trains no candidate;
/// `lsac` additionally fits L off the replay buffer (against the pre-update
/// policy) and penalizes the policy objective.
pub fn train_sac_family(
    cfg: &RunConfig,
    env: &mut dyn Environment,
    out_dir: Option<&Path>,
) -> Result<SacTrainResult, TrainError> {
    assert!(
        matches!(cfg.algo, Algo::Sac | Algo::Lsac),
        "off-policy trainer got {}",
        cfg.algo.name()
    );
    let mut report = RunReport::new();
    match sac_loop(cfg, env, out_dir, &mut report) {
        Ok((agent, lyapunov)) => Ok(SacTrainResult { agent, lyapunov, report }),
        Err((step, kind)) => Err(TrainError { step, kind, partial: std::mem::take(&mut report) }),
    }
}

fn sac_loop(
    cfg: &RunConfig,
    env: &mut dyn Environment,
    out_dir: Option<&Path>,
    report: &mut RunReport,
) -> Result<(SacAgent, Option<LyapunovFunction>), (u64, TrainErrorKind)> {
    let spec = env.spec().clone();
    let mut rngs = Rngs::new(cfg.seed);
    let mut agent = SacAgent::new(&spec, cfg);
    let mut lyapunov = super::build_lyapunov(cfg, &spec);

    let mut opt_policy = AdamState::new(&agent.policy.trunk, cfg.lr_policy);
    let mut opt_q = AdamState::new(&agent.q, cfg.lr_q);
    let mut opt_q2 = agent.q2.as_ref().map(|q2| AdamState::new(q2, cfg.lr_q));
    let mut opt_v = AdamState::new(&agent.v, cfg.lr_v);
    let mut opt_lyap = lyapunov
        .as_ref()
        .map(|lf| AdamState::new(&lf.net, cfg.lr_lyapunov));

    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut obs = env.reset(&mut rngs.env);
    let mut episode_return = 0.0;
    let mut episodes = 0u64;
    let mut updates = 0u64;
    let mut last_lyap_risk: Option<f64> = None;

    for step in 1..=cfg.steps {
        let action = if step <= cfg.learning_starts as u64 {
            uniform_action(&spec, &mut rngs.explore)
        } else {
            agent.policy.sample(&obs, &mut rngs.explore).action
        };
        let outcome = env.step(&action);
        if !all_finite(&outcome.obs) {
            return Err((step, TrainErrorKind::NonFinite("environment state".into())));
        }
        episode_return += outcome.reward;
        buffer.push(Transition {
            s: std::mem::take(&mut obs),
            a: action,
            r: outcome.reward,
            s_next: outcome.obs.clone(),
            done: outcome.done,
        });
        if outcome.done {
            episodes += 1;
            report.push(ReportRow::Episode { step, episode: episodes, episode_return });
            episode_return = 0.0;
            obs = env.reset(&mut rngs.env);
        } else {
            obs = outcome.obs;
        }

        if step > cfg.learning_starts as u64 {
            // Lyapunov phase first, fitting against the pre-update policy.
            if let (Some(lf), Some(opt)) = (lyapunov.as_mut(), opt_lyap.as_mut()) {
                for _ in 0..cfg.lyapunov_steps {
                    let batch = buffer.sample(cfg.lyapunov_batch, &mut rngs.lyapunov_batch);
                    let (risk, grads) = lf.training_risk_grad(&batch, &agent.policy);
                    if !risk.is_finite() {
                        return Err((step, TrainErrorKind::NonFinite("Lyapunov risk".into())));
                    }
                    adam_step(&mut lf.net, &grads, opt).map_err(|e| (step, e.into()))?;
                    last_lyap_risk = Some(risk);
                }
            }

            // Policy phase: critics and value first, then the actor, then the
            // target net. Noise order (value loss, then policy loss) is fixed.
            let batch = buffer.sample(cfg.batch_size, &mut rngs.policy_batch);
            let noise_v = draw_noise(&mut rngs.loss_noise, batch.len(), spec.action_dim);
            let noise_pi = draw_noise(&mut rngs.loss_noise, batch.len(), spec.action_dim);

            let vl = sac_value_losses(&agent, &batch, &noise_v);
            if !(vl.j_q.is_finite() && vl.j_v.is_finite()) {
                return Err((step, TrainErrorKind::NonFinite("value loss".into())));
            }
            adam_step(&mut agent.q, &vl.q_grads, &mut opt_q).map_err(|e| (step, e.into()))?;
            if let (Some(q2), Some(g), Some(opt)) =
                (agent.q2.as_mut(), vl.q2_grads.as_ref(), opt_q2.as_mut())
            {
                adam_step(q2, g, opt).map_err(|e| (step, e.into()))?;
            }
            adam_step(&mut agent.v, &vl.v_grads, &mut opt_v).map_err(|e| (step, e.into()))?;

            let pl = match (lyapunov.as_ref(), cfg.beta) {
                (Some(lf), beta) if beta > 0.0 => {
                    lsac_policy_loss(&agent, lf, beta, &batch, &noise_pi)
                }
                _ => sac_policy_loss(&agent, &batch, &noise_pi),
            };
            if !pl.loss.is_finite() {
                return Err((step, TrainErrorKind::NonFinite("policy loss".into())));
            }
            adam_step(&mut agent.policy.trunk, &pl.grads, &mut opt_policy)
                .map_err(|e| (step, e.into()))?;
            agent.v_target.polyak_from(&agent.v, agent.tau);

            updates += 1;
            if cfg.log_interval > 0 && updates % cfg.log_interval == 0 {
                report.push(ReportRow::Update {
                    step,
                    j_pi: Some(pl.loss),
                    j_q: Some(vl.j_q),
                    j_v: Some(vl.j_v),
                    lyap_risk: last_lyap_risk,
                    cert_risk: None,
                    violation_fraction: None,
                });
            }
        }

        if crossed(cfg.cert_interval, step - 1, step) && !buffer.is_empty() {
            if let Some(lf) = lyapunov.as_ref() {
                let batch = buffer.sample(cfg.cert_batch, &mut rngs.eval);
                report.push(ReportRow::Update {
                    step,
                    j_pi: None,
                    j_q: None,
                    j_v: None,
                    lyap_risk: None,
                    cert_risk: Some(lf.certification_risk(&batch, &agent.policy)),
                    violation_fraction: Some(lf.violation_fraction(&batch, &agent.policy)),
                });
            }
        }

        if let Some(dir) = out_dir {
            if crossed(cfg.checkpoint_interval, step - 1, step) {
                let ck = sac_checkpoint(&agent, lyapunov.as_ref(), cfg, step);
                ck.save(&dir.join(format!("checkpoint_{step}.json")))
                    .map_err(|e| (step, e.into()))?;
            }
        }
    }

    if let Some(dir) = out_dir {
        let ck = sac_checkpoint(&agent, lyapunov.as_ref(), cfg, cfg.steps);
        ck.save(&dir.join("checkpoint_final.json"))
            .map_err(|e| (cfg.steps, e.into()))?;
    }
    Ok((agent, lyapunov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::build_env;
    use crate::config::EnvName;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.hidden = 8;
        cfg.seed = 3;
        cfg
    }

    fn pendulum_spec() -> EnvSpec {
        build_env(&RunConfig::default()).unwrap().spec().clone()
    }

    fn random_batch(n: usize, spec: &EnvSpec, seed: u64) -> Vec<Transition> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        fn draw(rng: &mut ChaCha8Rng, dim: usize, lim: f64) -> Vec<f64> {
            (0..dim).map(|_| rng.gen_range(-lim..lim)).collect()
        }
        (0..n)
            .map(|_| Transition {
                s: draw(&mut rng, spec.obs_dim, 1.0),
                a: draw(&mut rng, spec.action_dim, 2.0),
                r: rng.gen_range(-1.0..0.0),
                s_next: draw(&mut rng, spec.obs_dim, 1.0),
                done: rng.gen_bool(0.1),
            })
            .collect()
    }

    fn test_lyapunov(spec: &EnvSpec, seed: u64) -> LyapunovFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = DenseNet::new(
            &[spec.obs_dim + spec.action_dim, 8, 1],
            Activation::Tanh,
            Activation::Identity,
            &mut rng,
        );
        LyapunovFunction::new_state_action(net, 0.01, spec.dt, spec.goal_obs.clone())
    }

    /// FD over every parameter of `net` for a scalar loss closure.
    fn fd_grads(net: &mut DenseNet, mut loss: impl FnMut(&DenseNet) -> f64) -> Vec<f64> {
        let h = 1e-5;
        let n = net.param_count();
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let bump = |delta: f64, net: &mut DenseNet| {
                let mut i = 0;
                net.for_each_param_mut(|p| {
                    if i == k {
                        *p += delta;
                    }
                    i += 1;
                });
            };
            bump(h, net);
            let plus = loss(net);
            bump(-2.0 * h, net);
            let minus = loss(net);
            bump(h, net);
            out.push((plus - minus) / (2.0 * h));
        }
        out
    }

    fn assert_grads_close(analytic: &Gradients, numeric: &[f64], what: &str) {
        let flat = analytic.flatten();
        assert_eq!(flat.len(), numeric.len());
        for (i, (a, n)) in flat.iter().zip(numeric).enumerate() {
            let scale = a.abs().max(n.abs()).max(1e-8);
            assert!(
                (a - n).abs() / scale < 1e-4,
                "{what} param {i}: analytic {a} vs numeric {n}"
            );
        }
    }

    #[test]
    fn q_loss_is_zero_when_q_matches_target_exactly() {
        // done transitions bootstrap nothing: target = r. A zero Q net and
        // zero rewards give J_Q = 0.
        let spec = pendulum_spec();
        let mut cfg = small_cfg();
        cfg.alpha = 0.0;
        let mut agent = SacAgent::new(&spec, &cfg);
        agent.q = DenseNet::zeros(
            &[spec.obs_dim + spec.action_dim, 4, 1],
            Activation::Relu,
            Activation::Identity,
        );
        let mut batch = random_batch(6, &spec, 1);
        for t in &mut batch {
            t.r = 0.0;
            t.done = true;
        }
        let noise = draw_noise(&mut ChaCha8Rng::seed_from_u64(2), 6, spec.action_dim);
        let out = sac_value_losses(&agent, &batch, &noise);
        assert_eq!(out.j_q, 0.0);
        assert!(out.q_grads.flatten().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn done_transition_regresses_to_reward_only() {
        // Single terminal transition: J_Q = ½ (Q − r)² regardless of V̄(s′).
        let spec = pendulum_spec();
        let agent = SacAgent::new(&spec, &small_cfg());
        let mut batch = random_batch(1, &spec, 5);
        batch[0].done = true;
        batch[0].r = -0.7;
        let noise = draw_noise(&mut ChaCha8Rng::seed_from_u64(2), 1, spec.action_dim);
        let out = sac_value_losses(&agent, &batch, &noise);
        let q = agent.q.forward_scalar(&concat(&batch[0].s, &batch[0].a));
        let expect = 0.5 * (q - (-0.7)) * (q - (-0.7));
        assert!((out.j_q - expect).abs() < 1e-12);
    }

    #[test]
    fn policy_loss_vanishes_without_entropy_and_critic() {
        // α = 0 and Q ≡ 0 leave nothing to optimize.
        let spec = pendulum_spec();
        let mut cfg = small_cfg();
        cfg.alpha = 0.0;
        let mut agent = SacAgent::new(&spec, &cfg);
        agent.q = DenseNet::zeros(
            &[spec.obs_dim + spec.action_dim, 4, 1],
            Activation::Relu,
            Activation::Identity,
        );
        let batch = random_batch(5, &spec, 7);
        let noise = draw_noise(&mut ChaCha8Rng::seed_from_u64(3), 5, spec.action_dim);
        let out = sac_policy_loss(&agent, &batch, &noise);
        assert_eq!(out.loss, 0.0);
        assert!(out.grads.flatten().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn lsac_policy_loss_with_beta_zero_is_sac_bitwise() {
        let spec = pendulum_spec();
        let agent = SacAgent::new(&spec, &small_cfg());
        let lf = test_lyapunov(&spec, 11);
        let batch = random_batch(12, &spec, 9);
        let noise = draw_noise(&mut ChaCha8Rng::seed_from_u64(4), 12, spec.action_dim);
        let plain = sac_policy_loss(&agent, &batch, &noise);
        let penalized = lsac_policy_loss(&agent, &lf, 0.0, &batch, &noise);
        assert_eq!(plain.loss.to_bits(), penalized.loss.to_bits());
        assert_eq!(plain.grads.flatten(), penalized.grads.flatten());
        assert_eq!(penalized.penalty, 0.0);
    }

    #[test]
    fn inactive_hinge_leaves_sac_loss_unchanged() {
        // A candidate that strictly decreases along every transition never
        // triggers the penalty: lsac loss equals sac loss (same noise).
        let spec = pendulum_spec();
        let agent = SacAgent::new(&spec, &small_cfg());
        // L = first observation coordinate (state-action net ignoring a).
        let mut net = DenseNet::zeros(
            &[spec.obs_dim + spec.action_dim, 1],
            Activation::Identity,
            Activation::Identity,
        );
        let mut first = true;
        net.for_each_param_mut(|p| {
            if first {
                *p = 1.0;
                first = false;
            }
        });
        let lf = LyapunovFunction::new_state_action(net, 0.0, spec.dt, spec.goal_obs.clone());
        let mut batch = random_batch(8, &spec, 13);
        for t in &mut batch {
            t.s[0] = 1.0;
            t.s_next[0] = -1.0; // every lie strictly negative, hinge off
        }
        let noise = draw_noise(&mut ChaCha8Rng::seed_from_u64(5), 8, spec.action_dim);
        let plain = sac_policy_loss(&agent, &batch, &noise);
        let penalized = lsac_policy_loss(&agent, &lf, 2.5, &batch, &noise);
        assert_eq!(penalized.penalty, 0.0);
        assert_eq!(plain.loss.to_bits(), penalized.loss.to_bits());
        assert_eq!(plain.grads.flatten(), penalized.grads.flatten());
    }

    #[test]
    fn value_loss_gradients_match_finite_differences() {
        let spec = pendulum_spec();
        let agent = SacAgent::new(&spec, &small_cfg());
        let batch = random_batch(4, &spec, 17);
        let noise = draw_noise(&mut ChaCha8Rng::seed_from_u64(6), 4, spec.action_dim);

        let out = sac_value_losses(&agent, &batch, &noise);

        // Q gradients: vary q, keep everything else fixed.
        let policy = agent.policy.trunk.clone();
        let q0 = agent.q.clone();
        let v0 = agent.v.clone();
        let numeric_q = {
            let mut q = agent.q.clone();
            let spec = spec.clone();
            let cfg = small_cfg();
            fd_grads(&mut q, |qn| {
                let mut a = SacAgent::new(&spec, &cfg);
                a.policy.trunk = policy.clone();
                a.q = qn.clone();
                a.v = v0.clone();
                a.v_target = agent.v_target.clone();
                sac_value_losses(&a, &batch, &noise).j_q
            })
        };
        assert_grads_close(&out.q_grads, &numeric_q, "J_Q");

        let numeric_v = {
            let mut v = agent.v.clone();
            let spec = spec.clone();
            let cfg = small_cfg();
            fd_grads(&mut v, |vn| {
                let mut a = SacAgent::new(&spec, &cfg);
                a.policy.trunk = policy.clone();
                a.q = q0.clone();
                a.v = vn.clone();
                a.v_target = agent.v_target.clone();
                sac_value_losses(&a, &batch, &noise).j_v
            })
        };
        assert_grads_close(&out.v_grads, &numeric_v, "J_V");
    }

    #[test]
    fn policy_loss_gradient_matches_finite_differences() {
        let spec = pendulum_spec();
        let agent = SacAgent::new(&spec, &small_cfg());
        let batch = random_batch(4, &spec, 23);
        let noise = draw_noise(&mut ChaCha8Rng::seed_from_u64(8), 4, spec.action_dim);
        let out = sac_policy_loss(&agent, &batch, &noise);

        let mut trunk = agent.policy.trunk.clone();
        let numeric = fd_grads(&mut trunk, |t| {
            let mut a = SacAgent::new(&spec, &small_cfg());
            a.policy.trunk = t.clone();
            a.q = agent.q.clone();
            sac_policy_loss(&a, &batch, &noise).loss
        });
        assert_grads_close(&out.grads, &numeric, "J_pi");
    }

    #[test]
    fn penalized_policy_loss_gradient_matches_finite_differences() {
        let spec = pendulum_spec();
        let agent = SacAgent::new(&spec, &small_cfg());
        let lf = test_lyapunov(&spec, 31);
        let batch = random_batch(4, &spec, 29);
        let noise = draw_noise(&mut ChaCha8Rng::seed_from_u64(9), 4, spec.action_dim);
        let beta = 1.7;
        let out = lsac_policy_loss(&agent, &lf, beta, &batch, &noise);
        assert!(out.penalty > 0.0, "test batch should trigger the hinge");

        let mut trunk = agent.policy.trunk.clone();
        let numeric = fd_grads(&mut trunk, |t| {
            let mut a = SacAgent::new(&spec, &small_cfg());
            a.policy.trunk = t.clone();
            a.q = agent.q.clone();
            lsac_policy_loss(&a, &lf, beta, &batch, &noise).loss
        });
        assert_grads_close(&out.grads, &numeric, "penalized J_pi");
    }

    #[test]
    fn twin_q_takes_min_and_routes_gradient_to_argmin() {
        let spec = pendulum_spec();
        let mut cfg = small_cfg();
        cfg.twin_q = true;
        let agent = SacAgent::new(&spec, &cfg);
        assert!(agent.q2.is_some());
        let batch = random_batch(4, &spec, 37);
        let noise = draw_noise(&mut ChaCha8Rng::seed_from_u64(10), 4, spec.action_dim);
        let out = sac_policy_loss(&agent, &batch, &noise);

        let mut trunk = agent.policy.trunk.clone();
        let numeric = fd_grads(&mut trunk, |t| {
            let mut a = SacAgent::new(&spec, &cfg);
            a.policy.trunk = t.clone();
            a.q = agent.q.clone();
            a.q2 = agent.q2.clone();
            sac_policy_loss(&a, &batch, &noise).loss
        });
        assert_grads_close(&out.grads, &numeric, "twin-Q J_pi");

        let vl = sac_value_losses(&agent, &batch, &noise);
        assert!(vl.j_q2.is_some());
        assert!(vl.q2_grads.is_some());
    }

    #[test]
    fn short_training_run_emits_episodes_and_updates() {
        let mut cfg = small_cfg();
        cfg.env = EnvName::Pendulum;
        cfg.algo = Algo::Lsac;
        cfg.steps = 450;
        cfg.learning_starts = 50;
        cfg.batch_size = 16;
        cfg.lyapunov_batch = 16;
        cfg.log_interval = 100;
        cfg.cert_interval = 200;
        cfg.cert_batch = 64;
        cfg.episode_length = Some(100);
        let mut env = build_env(&cfg).unwrap();
        let out = train_sac_family(&cfg, env.as_mut(), None).unwrap();

        let episodes = out
            .report
            .rows
            .iter()
            .filter(|r| matches!(r, ReportRow::Episode { .. }))
            .count();
        assert_eq!(episodes, 4, "450 steps at episode length 100");
        assert!(out.lyapunov.is_some());
        let has_cert = out.report.rows.iter().any(|r| {
            matches!(r, ReportRow::Update { cert_risk: Some(_), .. })
        });
        assert!(has_cert, "cert rows at the cert interval");
        assert!(out.agent.policy.trunk.all_finite());
    }

    #[test]
    fn beta_zero_lsac_matches_sac_run_bitwise() {
        let mut cfg = small_cfg();
        cfg.steps = 300;
        cfg.learning_starts = 40;
        cfg.batch_size = 8;
        cfg.lyapunov_batch = 8;
        cfg.episode_length = Some(50);
        cfg.cert_interval = 0;

        let mut sac_cfg = cfg.clone();
        sac_cfg.algo = Algo::Sac;
        let mut lsac_cfg = cfg.clone();
        lsac_cfg.algo = Algo::Lsac;
        lsac_cfg.beta = 0.0;

        let mut env1 = build_env(&sac_cfg).unwrap();
        let mut env2 = build_env(&lsac_cfg).unwrap();
        let a = train_sac_family(&sac_cfg, env1.as_mut(), None).unwrap();
        let b = train_sac_family(&lsac_cfg, env2.as_mut(), None).unwrap();

        assert!(a.agent.policy.trunk.bits_eq(&b.agent.policy.trunk));
        assert!(a.agent.q.bits_eq(&b.agent.q));
        assert!(a.agent.v.bits_eq(&b.agent.v));
        assert!(b.lyapunov.is_some(), "lsac still fits a candidate");
        assert!(a.lyapunov.is_none());
    }
}
