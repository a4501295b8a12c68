//! `lyacert`: train, evaluate, and certify stability-aware RL policies.
//!
//! Every run is driven by a flat JSON config; any config key can be set on
//! the command line as `--key value`. Artifacts (report.csv, resolved config,
//! checkpoints, analysis CSVs) land in one directory per run.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lyacert::algorithms::{
    build_env, lyapunov_from_checkpoint, policy_from_checkpoint, stream_rng, streams,
    train_ppo_family, train_sac_family,
};
use lyacert::cert::{
    certify, collect_batch, evaluate_policy, level_set_grid, CertThresholds, GridSpec,
};
use lyacert::checkpoint::Checkpoint;
use lyacert::config::EnvName;
use lyacert::envs::{default_reference, Environment, QuadrotorParams};
use lyacert::nn::SquashedGaussianPolicy;
use lyacert::report::{ReportRow, RunReport};
use lyacert::RunConfig;

#[derive(Parser)]
#[command(
    name = "lyacert",
    version,
    about = "Stable reinforcement learning with learned Lyapunov functions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy (and Lyapunov candidate) and write run artifacts.
    Train(TrainArgs),
    /// Roll out a trained policy with mean actions and summarize returns.
    Eval(EvalArgs),
    /// Run both stability-certificate checks on a trained checkpoint.
    Certify(CertifyArgs),
    /// Export the Lyapunov candidate over the pendulum phase plane as CSV.
    Levels(LevelsArgs),
    /// Generate a quadrotor reference trajectory CSV.
    RefGen(RefGenArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config file; documented defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory (default: <LYACERT_OUT or runs>/<algo>-<env>-seed<seed>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Inclusive seed range `a..b` (or one seed) swept sequentially into
    /// per-seed subdirectories plus a summary.csv.
    #[arg(long)]
    seeds: Option<String>,
    /// Config overrides as `--key value` or `--key=value`
    /// (e.g. `--algo lsac --env pendulum --seed 0 --steps 100000`).
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint JSON produced by `train`.
    checkpoint: PathBuf,
    /// Episodes to roll out.
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Environment config (default: config.resolved.json beside the
    /// checkpoint, else defaults shaped by the checkpoint metadata).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: the checkpoint's directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    /// Checkpoint JSON holding both a policy and a Lyapunov candidate.
    checkpoint: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: the checkpoint's directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fresh-batch size for the risk check (default: the config's cert_batch).
    #[arg(long)]
    batch: Option<usize>,
    /// Scan episodes (default: the config's violation_episodes).
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct LevelsArgs {
    /// Checkpoint JSON holding a Lyapunov candidate (pendulum runs only).
    checkpoint: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV (default: levels.csv beside the checkpoint).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 101)]
    n_theta: usize,
    #[arg(long, default_value_t = 101)]
    n_theta_dot: usize,
    #[arg(long, allow_hyphen_values = true, default_value_t = -std::f64::consts::PI)]
    theta_min: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = std::f64::consts::PI)]
    theta_max: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = -8.0)]
    theta_dot_min: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = 8.0)]
    theta_dot_max: f64,
    /// Seed for the Monte-Carlo action averaging of state-action candidates.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RefGenArgs {
    /// Output CSV path.
    #[arg(long, default_value = "reference.csv")]
    out: PathBuf,
    /// Steps in the generated trajectory.
    #[arg(long, default_value_t = 500)]
    steps: usize,
}

/// Command failures, split by exit code: config/usage problems exit 2,
/// numerical aborts exit 3 (with the partial report already on disk).
enum Failure {
    Config(String),
    Numerical(String),
}

impl From<lyacert::config::ConfigError> for Failure {
    fn from(e: lyacert::config::ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}
impl From<lyacert::checkpoint::CheckpointError> for Failure {
    fn from(e: lyacert::checkpoint::CheckpointError) -> Self {
        Failure::Config(e.to_string())
    }
}
impl From<lyacert::envs::EnvError> for Failure {
    fn from(e: lyacert::envs::EnvError) -> Self {
        Failure::Config(e.to_string())
    }
}
impl From<lyacert::cert::CertError> for Failure {
    fn from(e: lyacert::cert::CertError) -> Self {
        Failure::Config(e.to_string())
    }
}
impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Certify(args) => cmd_certify(args),
        Command::Levels(args) => cmd_levels(args),
        Command::RefGen(args) => cmd_ref_gen(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

/// Split a raw `--key value` / `--key=value` tail into override pairs,
/// routing the reserved keys (config, out, seeds) back to their options.
/// Keys are normalized kebab → snake so `--learning-starts` works.
struct ParsedTail {
    pairs: Vec<(String, String)>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seeds: Option<String>,
}

fn parse_override_tail(raw: &[String]) -> Result<ParsedTail, Failure> {
    let mut parsed = ParsedTail {
        pairs: Vec::new(),
        config: None,
        out: None,
        seeds: None,
    };
    let mut it = raw.iter();
    while let Some(token) = it.next() {
        let Some(stripped) = token.strip_prefix("--") else {
            return Err(Failure::Config(format!(
                "expected an override like --key value, got {token:?}"
            )));
        };
        let (key, value) = match stripped.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let value = it.next().ok_or_else(|| {
                    Failure::Config(format!("override --{stripped} is missing its value"))
                })?;
                (stripped.to_string(), value.clone())
            }
        };
        let key = key.replace('-', "_");
        match key.as_str() {
            "config" => parsed.config = Some(PathBuf::from(value)),
            "out" => parsed.out = Some(PathBuf::from(value)),
            "seeds" => parsed.seeds = Some(value),
            _ => parsed.pairs.push((key, value)),
        }
    }
    Ok(parsed)
}

fn output_root() -> PathBuf {
    std::env::var_os("LYACERT_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Per-seed results feeding summary.csv.
struct SeedOutcome {
    seed: u64,
    episodes: usize,
    final_return: Option<f64>,
    /// Mean over the last (up to) 20 episode returns.
    tail_mean: Option<f64>,
}

fn cmd_train(args: &TrainArgs) -> Result<(), Failure> {
    let tail = parse_override_tail(&args.overrides)?;
    let config_path = args.config.clone().or(tail.config);
    let base = match &config_path {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let cfg = base.with_overrides(&tail.pairs)?;
    cfg.validate()?;
    let out = args.out.clone().or(tail.out);

    match &args.seeds.clone().or(tail.seeds) {
        None => {
            let dir = out
                .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| {
                    output_root().join(format!(
                        "{}-{}-seed{}",
                        cfg.algo.name(),
                        cfg.env.name(),
                        cfg.seed
                    ))
                });
            run_one(&cfg, &dir)?;
            Ok(())
        }
        Some(spec) => {
            let seeds = parse_seeds(spec)?;
            let base_dir = out
                .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| {
                    output_root().join(format!("{}-{}", cfg.algo.name(), cfg.env.name()))
                });
            let mut outcomes = Vec::with_capacity(seeds.len());
            for &seed in &seeds {
                let mut run_cfg = cfg.clone();
                run_cfg.seed = seed;
                outcomes.push(run_one(&run_cfg, &base_dir.join(format!("seed{seed}")))?);
            }
            let summary_path = base_dir.join("summary.csv");
            std::fs::write(&summary_path, summary_csv(&outcomes))?;
            println!("wrote {}", summary_path.display());
            Ok(())
        }
    }
}

/// Inclusive `a..b` range, or a single seed.
fn parse_seeds(spec: &str) -> Result<Vec<u64>, Failure> {
    let parse = |s: &str| {
        s.trim()
            .parse::<u64>()
            .map_err(|_| Failure::Config(format!("bad seed {s:?} in --seeds {spec:?}")))
    };
    match spec.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (parse(a)?, parse(b)?);
            if b < a {
                return Err(Failure::Config(format!("empty seed range {spec:?}")));
            }
            Ok((a..=b).collect())
        }
        None => Ok(vec![parse(spec)?]),
    }
}

fn summary_csv(outcomes: &[SeedOutcome]) -> String {
    let mut csv = String::from("seed,episodes,final_return,mean_return_last20\n");
    for o in outcomes {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{}\n",
            o.seed,
            o.episodes,
            fmt(o.final_return),
            fmt(o.tail_mean)
        ));
    }
    csv
}

fn run_one(cfg: &RunConfig, dir: &Path) -> Result<SeedOutcome, Failure> {
    std::fs::create_dir_all(dir)?;
    let mut resolved = cfg.clone();
    resolved.out_dir = Some(dir.display().to_string());
    std::fs::write(
        dir.join("config.resolved.json"),
        resolved.to_json_pretty() + "\n",
    )?;
    let mut env = build_env(&resolved)?;
    let outcome = if resolved.algo.is_sac_family() {
        train_sac_family(&resolved, env.as_mut(), Some(dir)).map(|r| r.report)
    } else {
        train_ppo_family(&resolved, env.as_mut(), Some(dir)).map(|r| r.report)
    };
    let report_path = dir.join("report.csv");
    match outcome {
        Ok(report) => {
            report.save(&report_path)?;
            let episodes = count_episodes(&report);
            let tail = report.tail_episode_returns(20);
            let tail_mean = (!tail.is_empty())
                .then(|| tail.iter().sum::<f64>() / tail.len() as f64);
            let outcome = SeedOutcome {
                seed: resolved.seed,
                episodes,
                final_return: report.last_episode_return(),
                tail_mean,
            };
            println!(
                "wrote {} ({} episodes, final return {})",
                dir.display(),
                episodes,
                outcome
                    .final_return
                    .map(|r| format!("{r:.2}"))
                    .unwrap_or_else(|| "n/a".into())
            );
            Ok(outcome)
        }
        Err(err) => {
            // Keep whatever the run produced before the abort.
            err.partial.save(&report_path)?;
            Err(Failure::Numerical(err.to_string()))
        }
    }
}

fn count_episodes(report: &RunReport) -> usize {
    report
        .rows
        .iter()
        .filter(|row| matches!(row, ReportRow::Episode { .. }))
        .count()
}

/// Environment/config context for a checkpoint: an explicit --config wins,
/// then the run's own config.resolved.json, then defaults shaped by the
/// checkpoint metadata.
fn config_for_checkpoint(
    checkpoint_path: &Path,
    explicit: Option<&Path>,
    ck: &Checkpoint,
) -> Result<RunConfig, Failure> {
    if let Some(path) = explicit {
        return Ok(RunConfig::load(path)?);
    }
    let sibling = checkpoint_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("config.resolved.json");
    if sibling.is_file() {
        return Ok(RunConfig::load(&sibling)?);
    }
    let mut cfg = RunConfig::default();
    cfg.algo = name_to_value(&ck.meta.algo, "algo")?;
    cfg.env = name_to_value(&ck.meta.env, "env")?;
    cfg.seed = ck.meta.seed;
    Ok(cfg)
}

/// Parse a kebab-case enum name back through its serde form.
fn name_to_value<T: serde::de::DeserializeOwned>(name: &str, what: &str) -> Result<T, Failure> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| Failure::Config(format!("checkpoint names an unknown {what} {name:?}")))
}

fn checkpoint_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf()
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Failure> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let cfg = config_for_checkpoint(&args.checkpoint, args.config.as_deref(), &ck)?;
    let mut env = build_env(&cfg)?;
    let policy = policy_from_checkpoint(&ck, env.spec())?;

    let mut rng = stream_rng(args.seed, streams::EVAL);
    let summary = evaluate_policy(env.as_mut(), &policy, args.episodes, &mut rng)?;

    // First episode again under the same reset stream, recorded step by step.
    let mut traj_env = build_env(&cfg)?;
    let mut traj_rng = stream_rng(args.seed, streams::EVAL);
    let trajectory = record_trajectory(traj_env.as_mut(), &policy, &mut traj_rng);

    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| checkpoint_dir(&args.checkpoint));
    std::fs::create_dir_all(&out_dir)?;
    let json = serde_json::to_string_pretty(&summary).expect("summary JSON");
    std::fs::write(out_dir.join("eval_summary.json"), format!("{json}\n"))?;
    std::fs::write(out_dir.join("trajectory.csv"), trajectory)?;
    println!("{json}");
    Ok(())
}

/// One mean-action episode as `t,s...,a...,r` rows.
fn record_trajectory(
    env: &mut dyn Environment,
    policy: &SquashedGaussianPolicy,
    rng: &mut impl rand::RngCore,
) -> String {
    let (obs_dim, action_dim) = (env.spec().obs_dim, env.spec().action_dim);
    let mut csv = String::from("t");
    for d in 0..obs_dim {
        csv.push_str(&format!(",s{d}"));
    }
    for d in 0..action_dim {
        csv.push_str(&format!(",a{d}"));
    }
    csv.push_str(",r\n");
    let mut obs = env.reset(rng);
    let mut t = 0u64;
    loop {
        let action = policy.mean_action(&obs);
        let out = env.step(&action);
        csv.push_str(&t.to_string());
        for x in obs.iter().chain(&action) {
            csv.push_str(&format!(",{x}"));
        }
        csv.push_str(&format!(",{}\n", out.reward));
        obs = out.obs;
        t += 1;
        if out.done {
            break;
        }
    }
    csv
}

fn cmd_certify(args: &CertifyArgs) -> Result<(), Failure> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let cfg = config_for_checkpoint(&args.checkpoint, args.config.as_deref(), &ck)?;
    let mut env = build_env(&cfg)?;
    let policy = policy_from_checkpoint(&ck, env.spec())?;
    let lyapunov = lyapunov_from_checkpoint(&ck, &cfg, env.spec())?
        .ok_or_else(|| Failure::Config("no Lyapunov function in checkpoint".into()))?;

    let batch_size = args.batch.unwrap_or(cfg.cert_batch);
    let mut batch_rng = stream_rng(args.seed, streams::EVAL);
    let fresh = collect_batch(env.as_mut(), &policy, batch_size, &mut batch_rng);

    let episodes = args.episodes.unwrap_or(cfg.violation_episodes);
    let thresholds = CertThresholds::from_config(&cfg);
    let mut scan_rng = stream_rng(args.seed, streams::SCAN);
    let (verdict, scan) = certify(
        env.as_mut(),
        &policy,
        &lyapunov,
        &fresh,
        episodes,
        &thresholds,
        &mut scan_rng,
    )?;

    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| checkpoint_dir(&args.checkpoint));
    std::fs::create_dir_all(&out_dir)?;
    let verdict_json = verdict.to_json();
    std::fs::write(out_dir.join("cert_verdict.json"), format!("{verdict_json}\n"))?;
    std::fs::write(
        out_dir.join("violation_report.json"),
        format!("{}\n", scan.to_json()),
    )?;
    std::fs::write(
        out_dir.join("violations.csv"),
        scan.to_csv(env.spec().obs_dim),
    )?;
    println!("{verdict_json}");
    Ok(())
}

fn cmd_levels(args: &LevelsArgs) -> Result<(), Failure> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let cfg = config_for_checkpoint(&args.checkpoint, args.config.as_deref(), &ck)?;
    if cfg.env != EnvName::Pendulum {
        return Err(Failure::Config(format!(
            "level sets are a pendulum phase-plane export; this checkpoint is for {}",
            cfg.env.name()
        )));
    }
    let env = build_env(&cfg)?;
    let policy = policy_from_checkpoint(&ck, env.spec())?;
    let lyapunov = lyapunov_from_checkpoint(&ck, &cfg, env.spec())?
        .ok_or_else(|| Failure::Config("no Lyapunov function in checkpoint".into()))?;

    let grid = GridSpec {
        theta_min: args.theta_min,
        theta_max: args.theta_max,
        n_theta: args.n_theta,
        theta_dot_min: args.theta_dot_min,
        theta_dot_max: args.theta_dot_max,
        n_theta_dot: args.n_theta_dot,
    };
    let mut rng = stream_rng(args.seed, streams::SCAN);
    let levels = level_set_grid(&lyapunov, &policy, &grid, cfg.mc_samples, &mut rng)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| checkpoint_dir(&args.checkpoint).join("levels.csv"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    levels.save(&out)?;
    println!(
        "wrote {} ({}x{} cells)",
        out.display(),
        grid.n_theta,
        grid.n_theta_dot
    );
    Ok(())
}

fn cmd_ref_gen(args: &RefGenArgs) -> Result<(), Failure> {
    if args.steps == 0 {
        return Err(Failure::Config("reference needs at least one step".into()));
    }
    let reference = default_reference(args.steps, &QuadrotorParams::default());
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    reference.save(&args.out)?;
    println!("wrote {} ({} steps)", args.out.display(), args.steps);
    Ok(())
}
