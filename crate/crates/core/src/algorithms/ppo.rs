//! Clipped-surrogate policy optimization and its Lyapunov-penalized form. The
//! penalty enters through the advantage: Â_β = Â + β·min(0, −(lie + μ)),
//! recomputed with the current policy each minibatch and then treated as
//! constant data inside the surrogate. β = 0 recovers plain PPO bit for bit.

use super::{
    all_finite, checkpoint_meta, crossed, Rngs, TrainError, TrainErrorKind,
};
use crate::buffers::{compute_advantages, RolloutBuffer, RolloutStep, Transition};
use crate::checkpoint::Checkpoint;
use crate::config::{Algo, RunConfig};
use crate::envs::Environment;
use crate::lyapunov::{LyapunovFunction, LyapunovKind};
use crate::nn::{adam_step, AdamState, Activation, DenseNet, Gradients, SquashedGaussianPolicy};
use crate::par;
use crate::report::{ReportRow, RunReport};
use rand::seq::SliceRandom;
use std::path::Path;

pub struct PpoAgent {
    pub policy: SquashedGaussianPolicy,
    pub value: DenseNet,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
}

impl PpoAgent {
    pub fn new(spec: &crate::envs::EnvSpec, cfg: &RunConfig) -> Self {
        let h = cfg.hidden;
        let trunk = DenseNet::new(
            &[spec.obs_dim, h, h, 2 * spec.action_dim],
            Activation::Relu,
            Activation::Identity,
            &mut super::stream_rng(cfg.seed, super::streams::INIT_POLICY),
        );
        let policy = SquashedGaussianPolicy::new(trunk, spec.action_scale(), spec.action_bias());
        let value = DenseNet::new(
            &[spec.obs_dim, h, h, 1],
            Activation::Relu,
            Activation::Identity,
            &mut super::stream_rng(cfg.seed, super::streams::INIT_VALUE),
        );
        Self {
            policy,
            value,
            gamma: cfg.gamma,
            lambda: cfg.lambda,
            clip: cfg.clip,
        }
    }
}

/// Penalized advantage: Â + β·min(0, −(lie + μ)). Transitions already
/// decreasing fast enough (lie ≤ −μ) are untouched.
pub fn augmented_advantage(advantage: f64, lie: f64, mu: f64, beta: f64) -> f64 {
    advantage + beta * (-(lie + mu)).min(0.0)
}

/// One surrogate-loss item: state, stored pre-squash action, the log
/// probability recorded at collection, and the (possibly penalized)
/// advantage treated as constant.
pub struct PolicyDatum<'a> {
    pub s: &'a [f64],
    pub pre_tanh: &'a [f64],
    pub old_log_prob: f64,
    pub advantage: f64,
}

/// Clipped surrogate, as the minimized loss
///   −mean[min(ρ·Â, clip(ρ, 1−ε, 1+ε)·Â)],  ρ = exp(log π(a|s) − log π_old).
pub fn ppo_policy_loss(
    policy: &SquashedGaussianPolicy,
    clip: f64,
    data: &[PolicyDatum],
) -> (f64, Gradients) {
    assert!(!data.is_empty());
    let n = data.len() as f64;
    let (loss, grads) = par::chunked_fold(
        data,
        || (0.0, Gradients::zeros_like(&policy.trunk)),
        |mut acc: (f64, Gradients), d: &PolicyDatum| {
            let head = policy.head(d.s);
            let log_prob = policy.log_prob_pre_tanh(&head, d.pre_tanh);
            let ratio = (log_prob - d.old_log_prob).exp();
            let unclipped = ratio * d.advantage;
            let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * d.advantage;
            let term = -unclipped.min(clipped) / n;
            acc.0 += term;
            // The surrogate only differentiates through ρ when the unclipped
            // branch attains the min; otherwise the clip is a constant.
            if unclipped <= clipped {
                let coef = -ratio * d.advantage / n;
                let (mut d_mean, mut d_log_std) = policy.given_action_grads(&head, d.pre_tanh);
                for g in d_mean.iter_mut().chain(d_log_std.iter_mut()) {
                    *g *= coef;
                }
                policy.backward_head(&head, &d_mean, &d_log_std, &mut acc.1);
            }
            acc
        },
        |mut a, b| {
            a.0 += b.0;
            a.1.add(&b.1);
            a
        },
    );
    (loss, grads)
}

/// ½·mean (V(s) − R)² against empirical returns.
pub fn ppo_value_loss(
    value: &DenseNet,
    states: &[&[f64]],
    returns: &[f64],
) -> (f64, Gradients) {
    assert_eq!(states.len(), returns.len());
    assert!(!states.is_empty());
    let n = states.len() as f64;
    let items: Vec<(&[f64], f64)> = states.iter().copied().zip(returns.iter().copied()).collect();
    par::chunked_fold(
        &items,
        || (0.0, Gradients::zeros_like(value)),
        |mut acc: (f64, Gradients), &(s, ret): &(&[f64], f64)| {
            let cache = value.forward_cached(s);
            let resid = cache.output()[0] - ret;
            acc.0 += 0.5 * resid * resid / n;
            value.backward_acc(&cache, &[resid / n], &mut acc.1);
            acc
        },
        |mut a, b| {
            a.0 += b.0;
            a.1.add(&b.1);
            a
        },
    )
}

pub fn ppo_checkpoint(
    agent: &PpoAgent,
    lyapunov: Option<&LyapunovFunction>,
    cfg: &RunConfig,
    step: u64,
) -> Checkpoint {
    let mut ck = Checkpoint::new(checkpoint_meta(cfg, step));
    ck.insert_net("policy", &agent.policy.trunk);
    ck.insert_net("value", &agent.value);
    if let Some(lf) = lyapunov {
        ck.insert_net("lyapunov", &lf.net);
    }
    ck
}

pub struct PpoTrainResult {
    pub agent: PpoAgent,
    pub lyapunov: Option<LyapunovFunction>,
    pub report: RunReport,
}

struct Rollout {
    buffer: RolloutBuffer,
    /// Observation following the final collected step (bootstrap input).
    final_obs: Vec<f64>,
}

/// On-policy training: collect N steps, fit the candidate on that batch
/// (lppo modes), compute advantages, then run clipped policy/value epochs.
pub fn train_ppo_family(
    cfg: &RunConfig,
    env: &mut dyn Environment,
    out_dir: Option<&Path>,
) -> Result<PpoTrainResult, TrainError> {
    assert!(
        matches!(cfg.algo, Algo::Ppo | Algo::Lppo | Algo::LppoOnpolicyRisk),
        "on-policy trainer got {}",
        cfg.algo.name()
    );
    let mut report = RunReport::new();
    match ppo_loop(cfg, env, out_dir, &mut report) {
        Ok((agent, lyapunov)) => Ok(PpoTrainResult { agent, lyapunov, report }),
        Err((step, kind)) => Err(TrainError { step, kind, partial: std::mem::take(&mut report) }),
    }
}

fn rollout_transition(step: &RolloutStep) -> Transition {
    Transition {
        s: step.s.clone(),
        a: step.a.clone(),
        r: step.r,
        s_next: step.s_next.clone(),
        done: step.done,
    }
}

fn ppo_loop(
    cfg: &RunConfig,
    env: &mut dyn Environment,
    out_dir: Option<&Path>,
    report: &mut RunReport,
) -> Result<(PpoAgent, Option<LyapunovFunction>), (u64, TrainErrorKind)> {
    let spec = env.spec().clone();
    let mut rngs = Rngs::new(cfg.seed);
    let mut agent = PpoAgent::new(&spec, cfg);
    let mut lyapunov = super::build_lyapunov(cfg, &spec);

    let mut opt_policy = AdamState::new(&agent.policy.trunk, cfg.lr_policy);
    let mut opt_value = AdamState::new(&agent.value, cfg.lr_v);
    let mut opt_lyap = lyapunov
        .as_ref()
        .map(|lf| AdamState::new(&lf.net, cfg.lr_lyapunov));

    let mut obs = env.reset(&mut rngs.env);
    let mut episode_return = 0.0;
    let mut episodes = 0u64;
    let mut steps_done = 0u64;

    while steps_done < cfg.steps {
        let iter_start = steps_done;

        // --- Collection -----------------------------------------------------
        let mut rollout = RolloutBuffer::with_capacity(cfg.rollout_steps);
        for _ in 0..cfg.rollout_steps {
            let sample = agent.policy.sample(&obs, &mut rngs.explore);
            let value = agent.value.forward_scalar(&obs);
            let outcome = env.step(&sample.action);
            steps_done += 1;
            if !all_finite(&outcome.obs) {
                return Err((steps_done, TrainErrorKind::NonFinite("environment state".into())));
            }
            episode_return += outcome.reward;
            rollout.push(RolloutStep {
                s: std::mem::take(&mut obs),
                a: sample.action,
                pre_tanh: sample.pre_tanh,
                log_prob: sample.log_prob,
                value,
                r: outcome.reward,
                s_next: outcome.obs.clone(),
                done: outcome.done,
            });
            if outcome.done {
                episodes += 1;
                report.push(ReportRow::Episode {
                    step: steps_done,
                    episode: episodes,
                    episode_return,
                });
                episode_return = 0.0;
                obs = env.reset(&mut rngs.env);
            } else {
                obs = outcome.obs;
            }
        }
        let rollout = Rollout { buffer: rollout, final_obs: obs.clone() };
        let n = rollout.buffer.len();

        // --- Lyapunov fit on the fresh batch, pre-update policy --------------
        let mut lyap_risk_sum = 0.0;
        let mut lyap_fits = 0u32;
        if let (Some(lf), Some(opt)) = (lyapunov.as_mut(), opt_lyap.as_mut()) {
            for _ in 0..cfg.lyapunov_fit_steps {
                let batch: Vec<Transition> = (0..cfg.lyapunov_batch)
                    .map(|_| {
                        let i = rand::Rng::gen_range(&mut rngs.lyapunov_batch, 0..n);
                        rollout_transition(&rollout.buffer.steps[i])
                    })
                    .collect();
                let (risk, grads) = match lf.kind {
                    LyapunovKind::StateAction => lf.training_risk_grad(&batch, &agent.policy),
                    LyapunovKind::StateOnly => lf.on_policy_training_risk_grad(&batch),
                };
                if !risk.is_finite() {
                    return Err((steps_done, TrainErrorKind::NonFinite("Lyapunov risk".into())));
                }
                adam_step(&mut lf.net, &grads, opt).map_err(|e| (steps_done, e.into()))?;
                lyap_risk_sum += risk;
                lyap_fits += 1;
            }
        }

        // --- Advantages -------------------------------------------------------
        let last_value = agent.value.forward_scalar(&rollout.final_obs);
        let (advantages, returns) =
            compute_advantages(&rollout.buffer, last_value, cfg.gamma, cfg.lambda);

        // --- Clipped policy / value epochs ------------------------------------
        let mut j_pi_sum = 0.0;
        let mut j_v_sum = 0.0;
        let mut minibatches = 0u32;
        let mut indices: Vec<usize> = (0..n).collect();
        for _ in 0..cfg.epochs {
            indices.shuffle(&mut rngs.policy_batch);
            for chunk in indices.chunks(cfg.minibatch) {
                // Normalize raw advantages over the minibatch, then penalize.
                let raw: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
                let adv = if cfg.normalize_advantages {
                    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
                    let var =
                        raw.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / raw.len() as f64;
                    let std = var.sqrt() + 1e-8;
                    raw.iter().map(|a| (a - mean) / std).collect()
                } else {
                    raw
                };
                let adv: Vec<f64> = match (lyapunov.as_ref(), cfg.beta) {
                    (Some(lf), beta) if beta > 0.0 => chunk
                        .iter()
                        .zip(&adv)
                        .map(|(&i, &a)| {
                            let t = &rollout.buffer.steps[i];
                            let lie = lf.lie_derivative(&t.s, &t.a, &t.s_next, &agent.policy);
                            augmented_advantage(a, lie, lf.mu, beta)
                        })
                        .collect(),
                    _ => adv,
                };

                let data: Vec<PolicyDatum> = chunk
                    .iter()
                    .zip(&adv)
                    .map(|(&i, &a)| {
                        let t = &rollout.buffer.steps[i];
                        PolicyDatum {
                            s: &t.s,
                            pre_tanh: &t.pre_tanh,
                            old_log_prob: t.log_prob,
                            advantage: a,
                        }
                    })
                    .collect();
                let (j_pi, pg) = ppo_policy_loss(&agent.policy, cfg.clip, &data);
                if !j_pi.is_finite() {
                    return Err((steps_done, TrainErrorKind::NonFinite("policy loss".into())));
                }
                adam_step(&mut agent.policy.trunk, &pg, &mut opt_policy)
                    .map_err(|e| (steps_done, e.into()))?;

                let states: Vec<&[f64]> =
                    chunk.iter().map(|&i| rollout.buffer.steps[i].s.as_slice()).collect();
                let rets: Vec<f64> = chunk.iter().map(|&i| returns[i]).collect();
                let (j_v, vg) = ppo_value_loss(&agent.value, &states, &rets);
                if !j_v.is_finite() {
                    return Err((steps_done, TrainErrorKind::NonFinite("value loss".into())));
                }
                adam_step(&mut agent.value, &vg, &mut opt_value)
                    .map_err(|e| (steps_done, e.into()))?;

                j_pi_sum += j_pi;
                j_v_sum += j_v;
                minibatches += 1;
            }
        }

        report.push(ReportRow::Update {
            step: steps_done,
            j_pi: Some(j_pi_sum / f64::from(minibatches)),
            j_q: None,
            j_v: Some(j_v_sum / f64::from(minibatches)),
            lyap_risk: (lyap_fits > 0).then(|| lyap_risk_sum / f64::from(lyap_fits)),
            cert_risk: None,
            violation_fraction: None,
        });

        // --- Certification diagnostics on the fresh batch ----------------------
        if crossed(cfg.cert_interval, iter_start, steps_done) {
            if let Some(lf) = lyapunov.as_ref() {
                let batch: Vec<Transition> =
                    rollout.buffer.steps.iter().map(rollout_transition).collect();
                let cert_risk = match lf.kind {
                    LyapunovKind::StateAction => lf.certification_risk(&batch, &agent.policy),
                    LyapunovKind::StateOnly => lf.on_policy_risk(&batch),
                };
                report.push(ReportRow::Update {
                    step: steps_done,
                    j_pi: None,
                    j_q: None,
                    j_v: None,
                    lyap_risk: None,
                    cert_risk: Some(cert_risk),
                    violation_fraction: Some(lf.violation_fraction(&batch, &agent.policy)),
                });
            }
        }

        if let Some(dir) = out_dir {
            if crossed(cfg.checkpoint_interval, iter_start, steps_done) {
                let ck = ppo_checkpoint(&agent, lyapunov.as_ref(), cfg, steps_done);
                ck.save(&dir.join(format!("checkpoint_{steps_done}.json")))
                    .map_err(|e| (steps_done, e.into()))?;
            }
        }
    }

    if let Some(dir) = out_dir {
        let ck = ppo_checkpoint(&agent, lyapunov.as_ref(), cfg, steps_done);
        ck.save(&dir.join("checkpoint_final.json"))
            .map_err(|e| (steps_done, e.into()))?;
    }
    Ok((agent, lyapunov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{build_env, draw_noise};
    use crate::envs::EnvSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.algo = Algo::Ppo;
        cfg.hidden = 8;
        cfg.seed = 5;
        cfg
    }

    fn pendulum_spec() -> EnvSpec {
        build_env(&small_cfg()).unwrap().spec().clone()
    }

    struct OwnedDatum {
        s: Vec<f64>,
        pre_tanh: Vec<f64>,
        old_log_prob: f64,
        advantage: f64,
    }

    fn random_data(policy: &SquashedGaussianPolicy, n: usize, seed: u64) -> Vec<OwnedDatum> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let s: Vec<f64> =
                    (0..policy.obs_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let sample = policy.sample(&s, &mut rng);
                OwnedDatum {
                    s,
                    pre_tanh: sample.pre_tanh,
                    // Off-policy log prob so ratios differ from 1.
                    old_log_prob: sample.log_prob + rng.gen_range(-0.3..0.3),
                    advantage: rng.gen_range(-2.0..2.0),
                }
            })
            .collect()
    }

    fn borrow(data: &[OwnedDatum]) -> Vec<PolicyDatum<'_>> {
        data.iter()
            .map(|d| PolicyDatum {
                s: &d.s,
                pre_tanh: &d.pre_tanh,
                old_log_prob: d.old_log_prob,
                advantage: d.advantage,
            })
            .collect()
    }

    /// Straight-line surrogate evaluation, no shared code with the
    /// implementation's fold.
    fn surrogate_oracle(
        policy: &SquashedGaussianPolicy,
        clip: f64,
        data: &[PolicyDatum],
    ) -> f64 {
        let mut total = 0.0;
        for d in data {
            let head = policy.head(d.s);
            let logp = policy.log_prob_pre_tanh(&head, d.pre_tanh);
            let ratio = (logp - d.old_log_prob).exp();
            let a = d.advantage;
            let clipped_ratio = ratio.max(1.0 - clip).min(1.0 + clip);
            total += (ratio * a).min(clipped_ratio * a);
        }
        -total / data.len() as f64
    }

    #[test]
    fn surrogate_matches_branch_free_oracle() {
        let spec = pendulum_spec();
        let agent = PpoAgent::new(&spec, &small_cfg());
        let owned = random_data(&agent.policy, 64, 3);
        let data = borrow(&owned);
        let (loss, _) = ppo_policy_loss(&agent.policy, 0.2, &data);
        let oracle = surrogate_oracle(&agent.policy, 0.2, &data);
        assert!((loss - oracle).abs() < 1e-12, "{loss} vs {oracle}");
    }

    #[test]
    fn ratio_one_makes_clipping_inert() {
        // old_log_prob recomputed from the stored pre_tanh ⇒ ρ = 1 exactly,
        // loss = −mean Â for any clip range.
        let spec = pendulum_spec();
        let agent = PpoAgent::new(&spec, &small_cfg());
        let mut owned = random_data(&agent.policy, 32, 7);
        for d in &mut owned {
            let head = agent.policy.head(&d.s);
            d.old_log_prob = agent.policy.log_prob_pre_tanh(&head, &d.pre_tanh);
        }
        let data = borrow(&owned);
        let mean_adv = owned.iter().map(|d| d.advantage).sum::<f64>() / owned.len() as f64;
        for clip in [0.05, 0.2, 0.5] {
            let (loss, _) = ppo_policy_loss(&agent.policy, clip, &data);
            assert!((loss - (-mean_adv)).abs() < 1e-12);
        }
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let spec = pendulum_spec();
        let agent = PpoAgent::new(&spec, &small_cfg());
        let owned = random_data(&agent.policy, 6, 11);
        let data = borrow(&owned);
        let (_, grads) = ppo_policy_loss(&agent.policy, 0.2, &data);

        let h = 1e-5;
        let mut trunk = agent.policy.trunk.clone();
        let n_params = trunk.param_count();
        let flat = grads.flatten();
        for k in 0..n_params {
            let bump = |delta: f64, net: &mut DenseNet| {
                let mut i = 0;
                net.for_each_param_mut(|p| {
                    if i == k {
                        *p += delta;
                    }
                    i += 1;
                });
            };
            let eval = |net: &DenseNet| {
                let p = SquashedGaussianPolicy::new(
                    net.clone(),
                    agent.policy.action_scale.clone(),
                    agent.policy.action_bias.clone(),
                );
                ppo_policy_loss(&p, 0.2, &data).0
            };
            bump(h, &mut trunk);
            let plus = eval(&trunk);
            bump(-2.0 * h, &mut trunk);
            let minus = eval(&trunk);
            bump(h, &mut trunk);
            let numeric = (plus - minus) / (2.0 * h);
            let scale = flat[k].abs().max(numeric.abs()).max(1e-8);
            assert!(
                (flat[k] - numeric).abs() / scale < 1e-4,
                "param {k}: analytic {} vs numeric {numeric}",
                flat[k]
            );
        }
    }

    #[test]
    fn value_loss_and_gradient_match_finite_differences() {
        let spec = pendulum_spec();
        let agent = PpoAgent::new(&spec, &small_cfg());
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let states_owned: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..spec.obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let states: Vec<&[f64]> = states_owned.iter().map(Vec::as_slice).collect();
        let returns: Vec<f64> = (0..5).map(|_| rng.gen_range(-50.0..0.0)).collect();
        let (loss, grads) = ppo_value_loss(&agent.value, &states, &returns);

        // Hand value.
        let mut expect = 0.0;
        for (s, r) in states.iter().zip(&returns) {
            let v = agent.value.forward_scalar(s);
            expect += 0.5 * (v - r) * (v - r) / 5.0;
        }
        assert!((loss - expect).abs() < 1e-12);

        let h = 1e-5;
        let mut net = agent.value.clone();
        let flat = grads.flatten();
        for k in 0..net.param_count() {
            let bump = |delta: f64, net: &mut DenseNet| {
                let mut i = 0;
                net.for_each_param_mut(|p| {
                    if i == k {
                        *p += delta;
                    }
                    i += 1;
                });
            };
            bump(h, &mut net);
            let plus = ppo_value_loss(&net, &states, &returns).0;
            bump(-2.0 * h, &mut net);
            let minus = ppo_value_loss(&net, &states, &returns).0;
            bump(h, &mut net);
            let numeric = (plus - minus) / (2.0 * h);
            let scale = flat[k].abs().max(numeric.abs()).max(1e-8);
            assert!((flat[k] - numeric).abs() / scale < 1e-4);
        }
    }

    #[test]
    fn augmented_advantage_arithmetic() {
        // Decreasing fast enough: untouched.
        assert_eq!(augmented_advantage(1.5, -0.2, 0.1, 2.0), 1.5);
        // Boundary lie = −μ: untouched.
        assert_eq!(augmented_advantage(1.5, -0.1, 0.1, 2.0), 1.5);
        // Violation: shrunk by β(lie + μ).
        let a = augmented_advantage(1.0, 0.4, 0.1, 2.0);
        assert!((a - 0.0).abs() < 1e-15, "1.0 − 2·0.5 = 0, got {a}");
        // β = 0: no effect ever.
        assert_eq!(augmented_advantage(-0.7, 10.0, 0.1, 0.0), -0.7);
    }

    #[test]
    fn single_transition_penalized_loss_oracle() {
        // One datum, ratio 1 ⇒ surrogate = −Â_β. Verify against hand-computed
        // lie and penalty.
        let spec = pendulum_spec();
        let agent = PpoAgent::new(&spec, &small_cfg());
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s: Vec<f64> = (0..spec.obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s_next: Vec<f64> = (0..spec.obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sample = agent.policy.sample(&s, &mut rng);

        let mut lnet = DenseNet::zeros(
            &[spec.obs_dim + spec.action_dim, 1],
            Activation::Identity,
            Activation::Identity,
        );
        let mut first = true;
        lnet.for_each_param_mut(|p| {
            if first {
                *p = 1.0;
                first = false;
            }
        });
        let lf = LyapunovFunction::new_state_action(lnet, 0.05, spec.dt, spec.goal_obs.clone());

        let lie = lf.lie_derivative(&s, &sample.action, &s_next, &agent.policy);
        let expect_lie = (s_next[0] - s[0]) / spec.dt;
        assert!((lie - expect_lie).abs() < 1e-12);

        let beta = 3.0;
        let adv = 1.25;
        let adv_b = augmented_advantage(adv, lie, lf.mu, beta);
        let datum = PolicyDatum {
            s: &s,
            pre_tanh: &sample.pre_tanh,
            old_log_prob: sample.log_prob,
            advantage: adv_b,
        };
        let (loss, _) = ppo_policy_loss(&agent.policy, 0.2, std::slice::from_ref(&datum));
        let expect = -(adv + beta * (-(expect_lie + 0.05)).min(0.0));
        assert!((loss - expect).abs() < 1e-12, "{loss} vs {expect}");
    }

    #[test]
    fn short_run_emits_iteration_rows_and_episodes() {
        let mut cfg = small_cfg();
        cfg.algo = Algo::Lppo;
        cfg.steps = 400;
        cfg.rollout_steps = 128;
        cfg.minibatch = 32;
        cfg.epochs = 2;
        cfg.lyapunov_fit_steps = 4;
        cfg.lyapunov_batch = 32;
        cfg.episode_length = Some(64);
        cfg.cert_interval = 128;
        let mut env = build_env(&cfg).unwrap();
        let out = train_ppo_family(&cfg, env.as_mut(), None).unwrap();

        // 400 steps at 128 per iteration ⇒ 4 iterations (512 steps collected).
        let updates = out
            .report
            .rows
            .iter()
            .filter(|r| matches!(r, ReportRow::Update { j_pi: Some(_), .. }))
            .count();
        assert_eq!(updates, 4);
        let episodes = out
            .report
            .rows
            .iter()
            .filter(|r| matches!(r, ReportRow::Episode { .. }))
            .count();
        assert_eq!(episodes, 8, "512 steps / 64-step episodes");
        assert!(out.report.rows.iter().any(|r| matches!(
            r,
            ReportRow::Update { cert_risk: Some(_), .. }
        )));
        assert!(out.lyapunov.is_some());
    }

    #[test]
    fn beta_zero_lppo_matches_ppo_run_bitwise() {
        let mut base = small_cfg();
        base.steps = 256;
        base.rollout_steps = 64;
        base.minibatch = 32;
        base.epochs = 2;
        base.lyapunov_fit_steps = 2;
        base.lyapunov_batch = 16;
        base.episode_length = Some(50);
        base.cert_interval = 0;

        let ppo_cfg = base.clone();
        let mut lppo_cfg = base.clone();
        lppo_cfg.algo = Algo::Lppo;
        lppo_cfg.beta = 0.0;

        let mut env1 = build_env(&ppo_cfg).unwrap();
        let mut env2 = build_env(&lppo_cfg).unwrap();
        let a = train_ppo_family(&ppo_cfg, env1.as_mut(), None).unwrap();
        let b = train_ppo_family(&lppo_cfg, env2.as_mut(), None).unwrap();

        assert!(a.agent.policy.trunk.bits_eq(&b.agent.policy.trunk));
        assert!(a.agent.value.bits_eq(&b.agent.value));
        assert!(b.lyapunov.is_some() && a.lyapunov.is_none());
    }

    #[test]
    fn onpolicy_risk_mode_trains_state_only_candidate() {
        let mut cfg = small_cfg();
        cfg.algo = Algo::LppoOnpolicyRisk;
        cfg.steps = 128;
        cfg.rollout_steps = 64;
        cfg.minibatch = 32;
        cfg.epochs = 1;
        cfg.lyapunov_fit_steps = 2;
        cfg.lyapunov_batch = 16;
        cfg.episode_length = Some(32);
        let mut env = build_env(&cfg).unwrap();
        let out = train_ppo_family(&cfg, env.as_mut(), None).unwrap();
        let lf = out.lyapunov.unwrap();
        assert_eq!(lf.kind, LyapunovKind::StateOnly);
        assert_eq!(lf.net.input_dim(), 3);
    }

    #[test]
    fn noise_draws_are_sequential_and_reproducible() {
        // draw_noise pulls exactly n·dim values in order, so splitting one
        // request into two changes nothing.
        let mut a = crate::algorithms::stream_rng(1, crate::algorithms::streams::LOSS_NOISE);
        let n1 = draw_noise(&mut a, 3, 2);
        let n2 = draw_noise(&mut a, 3, 2);
        let mut b = crate::algorithms::stream_rng(1, crate::algorithms::streams::LOSS_NOISE);
        let m = draw_noise(&mut b, 6, 2);
        let flat1: Vec<f64> = n1.into_iter().chain(n2).flatten().collect();
        let flat2: Vec<f64> = m.into_iter().flatten().collect();
        assert_eq!(flat1, flat2);
    }
}
