use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use tunelab::agents::{AgentKind, Checkpoint, Policy};
use tunelab::emulator::{ClusterModel, EmulatorEnv};
use tunelab::env::{Environment, SyntheticEnv};
use tunelab::harness::{
    amortized_cost, collect_sessions, diagonal_grid, evaluate, fairness_experiment, par_map, sweep_static, train,
    write_csv, write_json, Controller, FlowSpec, MetricRow, RandomController,
};
use tunelab::rewards::{RewardKind, RewardTracker};
use tunelab::translog::{parse_log, serialize_log, split_sessions, TransitionDataset};
use tunelab::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "tunelab", version, about = "Learned concurrency/parallelism tuning on a synthetic link")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON configuration document; missing sections take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory; must not exist yet.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Independent seeds to run, starting at --seed.
    #[arg(long, global = true, default_value_t = 1)]
    runs: u64,
    /// Parallel workers for --runs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum EnvKind {
    Synthetic,
    Emulator,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum AgentArg {
    Dqn,
    Ppo,
}

impl From<AgentArg> for AgentKind {
    fn from(a: AgentArg) -> Self {
        match a {
            AgentArg::Dqn => AgentKind::Dqn,
            AgentArg::Ppo => AgentKind::Ppo,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum RewardArg {
    Fe,
    Te,
}

impl From<RewardArg> for RewardKind {
    fn from(r: RewardArg) -> Self {
        match r {
            RewardArg::Fe => RewardKind::FairnessEfficiency,
            RewardArg::Te => RewardKind::ThroughputEnergy,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Static (cc, p) sweep on the synthetic link; optionally writes
    /// random-exploration transfer logs.
    Simulate {
        /// Episodes of uniformly random actions to log.
        #[arg(long, default_value_t = 0)]
        log_episodes: usize,
    },
    /// Parse transfer logs, build transitions and fit the cluster model.
    Cluster {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        /// Gap in seconds that separates sessions within one log.
        #[arg(long, default_value_t = 60.0)]
        session_gap: f64,
    },
    /// Train an agent; writes a checkpoint and learning curve.
    Train {
        #[arg(long, value_enum, default_value_t = EnvKind::Synthetic)]
        env: EnvKind,
        #[arg(long, value_enum)]
        agent: Option<AgentArg>,
        #[arg(long, value_enum)]
        reward: Option<RewardArg>,
        #[arg(long)]
        total_steps: Option<u64>,
        /// Dataset written by `cluster` (emulator only).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Cluster model written by `cluster` (emulator only).
        #[arg(long)]
        clusters: Option<PathBuf>,
        /// Continue training from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Greedy evaluation rollouts of a checkpoint on the synthetic link.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        reward: Option<RewardArg>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Several checkpoints sharing one link.
    Fairness {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, value_enum)]
        reward: Option<RewardArg>,
        #[arg(long)]
        duration: Option<u64>,
    },
    /// Amortized energy cost table.
    Cost {
        #[arg(long)]
        steps_per_transfer: Option<u64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Cluster { .. } => "cluster",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Fairness { .. } => "fairness",
            Command::Cost { .. } => "cost",
        }
    }

    fn inputs(&self) -> Vec<PathBuf> {
        match self {
            Command::Cluster { logs, .. } => logs.clone(),
            Command::Train {
                dataset,
                clusters,
                resume,
                ..
            } => [dataset, clusters, resume].into_iter().flatten().cloned().collect(),
            Command::Eval { checkpoint, .. } => vec![checkpoint.clone()],
            Command::Fairness { checkpoints, .. } => checkpoints.clone(),
            _ => Vec::new(),
        }
    }
}

#[derive(Serialize)]
struct InputRef {
    path: PathBuf,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    subcommand: &'a str,
    args: Vec<String>,
    config_path: Option<&'a Path>,
    config: &'a RunConfig,
    seed: u64,
    runs: u64,
    out: &'a Path,
    inputs: Vec<InputRef>,
    version: &'static str,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Loads the configuration and applies flag overrides.
fn load_config(common: &Common, cmd: &Command) -> Result<RunConfig> {
    let (mut cfg, has_train) = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let raw: serde_json::Value = serde_json::from_str(&text).context("config is not JSON")?;
            let has_train = raw.get("train").is_some();
            (RunConfig::from_json(&text)?, has_train)
        }
        None => (RunConfig::default(), false),
    };
    cfg.train.seed = common.seed;
    match cmd {
        Command::Cluster { k: Some(k), .. } => cfg.cluster.k = *k,
        Command::Train {
            agent,
            reward,
            total_steps,
            ..
        } => {
            if let Some(a) = agent {
                let kind = AgentKind::from(*a);
                if has_train {
                    cfg.train.agent = kind;
                } else {
                    cfg.train = tunelab::TrainConfig {
                        seed: common.seed,
                        ..tunelab::TrainConfig::for_agent(kind)
                    };
                }
            }
            if let Some(r) = reward {
                cfg.reward.kind = (*r).into();
            }
            if let Some(n) = total_steps {
                cfg.train.total_steps = *n;
            }
        }
        Command::Eval { reward, episodes, .. } => {
            if let Some(r) = reward {
                cfg.reward.kind = (*r).into();
            }
            if let Some(e) = episodes {
                cfg.eval.episodes = *e;
            }
        }
        Command::Fairness { reward, duration, .. } => {
            if let Some(r) = reward {
                cfg.reward.kind = (*r).into();
            }
            if let Some(d) = duration {
                cfg.fairness.duration = *d;
            }
        }
        Command::Cost {
            steps_per_transfer: Some(s),
        } => cfg.cost.steps_per_transfer = *s,
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_dir(root: &Path, seed: u64, runs: u64) -> PathBuf {
    if runs > 1 {
        root.join(format!("seed-{seed}"))
    } else {
        root.to_path_buf()
    }
}

fn simulate(cfg: &RunConfig, seed: u64, dir: &Path, log_episodes: usize) -> Result<()> {
    let grid = if cfg.sweep.grid.is_empty() {
        diagonal_grid(&cfg.env)
    } else {
        cfg.sweep.grid.clone()
    };
    let rows = sweep_static(&cfg.env, &grid, cfg.sweep.mis, seed)?;
    write_csv(&dir.join("sweep.csv"), &rows)?;
    if log_episodes > 0 {
        let mut env = SyntheticEnv::new(cfg.env.clone(), seed)?;
        let mut ctl = RandomController::new(seed ^ 0x5eed);
        let sessions = collect_sessions(&mut env, &mut ctl, log_episodes, cfg.train.history)?;
        let mut text = String::new();
        for s in sessions {
            let mut tracker = RewardTracker::new(cfg.reward.clone());
            let mut scored = Vec::with_capacity(s.len());
            for mut o in s {
                let (_, metric) = tracker.observe(&o)?;
                o.score = metric;
                scored.push(o);
            }
            text.push_str(&serialize_log(&scored));
        }
        std::fs::write(dir.join("transfer.log"), text)?;
    }
    Ok(())
}

fn cluster(cfg: &RunConfig, seed: u64, dir: &Path, logs: &[PathBuf], session_gap: f64) -> Result<()> {
    let mut sessions = Vec::new();
    for path in logs {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let obs = parse_log(&text).with_context(|| format!("parsing {}", path.display()))?;
        sessions.extend(split_sessions(&obs, session_gap));
    }
    let dataset = TransitionDataset::from_sessions(&sessions, cfg.env.bounds, &cfg.reward)?;
    ensure!(
        cfg.cluster.k <= dataset.len(),
        "k = {} exceeds the {} transitions in the logs",
        cfg.cluster.k,
        dataset.len()
    );
    let model = ClusterModel::fit(&dataset, &cfg.cluster, seed)?;
    std::fs::write(dir.join("dataset.json"), dataset.to_json()?)?;
    std::fs::write(dir.join("clusters.json"), model.to_json()?)?;
    write_json(
        &dir.join("summary.json"),
        &serde_json::json!({
            "transitions": dataset.len(),
            "dataset_id": dataset.id,
            "k": model.k,
            "sse": model.sse,
        }),
    )?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    cfg: &RunConfig,
    seed: u64,
    dir: &Path,
    env_kind: EnvKind,
    dataset: Option<&Path>,
    clusters: Option<&Path>,
    resume: Option<&Path>,
) -> Result<()> {
    let tcfg = tunelab::TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let init = resume
        .map(|p| -> Result<Policy> { Ok(Checkpoint::load(p)?.into_policy()?) })
        .transpose()?;
    let mut env: Box<dyn Environment> = match env_kind {
        EnvKind::Synthetic => Box::new(SyntheticEnv::new(cfg.env.clone(), seed)?),
        EnvKind::Emulator => {
            let (Some(ds), Some(cl)) = (dataset, clusters) else {
                bail!("--env emulator needs --dataset and --clusters from the `cluster` subcommand");
            };
            let ds = TransitionDataset::from_json(&std::fs::read_to_string(ds)?)?;
            let cl = ClusterModel::from_json(&std::fs::read_to_string(cl)?)?;
            Box::new(EmulatorEnv::new(
                Arc::new(ds),
                Arc::new(cl),
                tcfg.history,
                cfg.env.horizon,
                seed,
            )?)
        }
    };
    let outcome = train(env.as_mut(), &tcfg, &cfg.reward, init)?;
    Checkpoint::new(&outcome.policy, &tcfg).save(&dir.join("checkpoint.json"))?;
    write_csv(&dir.join("curve.csv"), &outcome.curve)?;
    let returns = outcome.returns();
    write_json(
        &dir.join("summary.json"),
        &serde_json::json!({
            "env": env_kind,
            "agent": tcfg.agent,
            "reward": cfg.reward.kind,
            "seed": seed,
            "total_steps": tcfg.total_steps,
            "episodes": returns.len(),
            "returns": returns,
            "losses": outcome.losses,
        }),
    )?;
    Ok(())
}

fn eval_cmd(cfg: &RunConfig, seed: u64, dir: &Path, checkpoint: &Path) -> Result<()> {
    let mut policy = Checkpoint::load(checkpoint)?.into_policy()?;
    let history = policy.history;
    let mut env = SyntheticEnv::new(cfg.env.clone(), seed)?;
    let (summary, traces) = evaluate(&mut env, &mut policy, cfg.eval.episodes, &cfg.reward, history)?;
    let mut rows = Vec::new();
    for tr in &traces {
        for st in &tr.steps {
            rows.push(MetricRow {
                time: st.obs.timestamp,
                flow_id: 0,
                cc: st.obs.cc,
                p: st.obs.p,
                throughput_bps: st.obs.throughput,
                plr: st.obs.plr,
                rtt_s: st.obs.mean_rtt,
                energy_j: st.obs.energy,
                reward: st.reward,
                jfi: 1.0,
            });
        }
    }
    write_csv(&dir.join("metrics.csv"), &rows)?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(())
}

fn fairness_cmd(cfg: &RunConfig, seed: u64, dir: &Path, checkpoints: &[PathBuf]) -> Result<()> {
    ensure!(checkpoints.len() >= 2, "fairness needs at least two checkpoints");
    let mut flows = Vec::new();
    for (i, path) in checkpoints.iter().enumerate() {
        let policy = Checkpoint::load(path)?.into_policy()?;
        let history = policy.history;
        let controller: Box<dyn Controller + Send> = Box::new(policy);
        flows.push(FlowSpec {
            controller,
            start: cfg.fairness.starts.get(i).copied().unwrap_or(0),
            stop: cfg.fairness.stops.get(i).copied().flatten(),
            reward: cfg.reward.clone(),
            history,
        });
    }
    let out = fairness_experiment(&mut flows, &cfg.env, cfg.fairness.duration, seed)?;
    write_csv(&dir.join("metrics.csv"), &out.rows)?;
    let d = out.jfi.len();
    write_json(
        &dir.join("summary.json"),
        &serde_json::json!({
            "flows": checkpoints.len(),
            "duration": cfg.fairness.duration,
            "mean_jfi": out.mean_jfi(0, d),
            "steady_state_jfi": out.mean_jfi(d / 2, d),
            "peak_utilization": out.peak_utilization,
        }),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct CostRow<'a> {
    model: &'a str,
    steps_per_transfer: u64,
    transfers: u64,
    total_j: f64,
    per_transfer_j: f64,
}

fn cost_cmd(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for m in &cfg.cost.models {
        for &t in &cfg.cost.transfers {
            let (total, per) = amortized_cost(&m.cost, cfg.cost.steps_per_transfer, t)?;
            rows.push(CostRow {
                model: &m.name,
                steps_per_transfer: cfg.cost.steps_per_transfer,
                transfers: t,
                total_j: total,
                per_transfer_j: per,
            });
        }
    }
    for r in &rows {
        println!(
            "{:<8} S={:<6} T={:<8} total={:.1} J  per-transfer={:.1} J",
            r.model, r.steps_per_transfer, r.transfers, r.total_j, r.per_transfer_j
        );
    }
    write_csv(&dir.join("cost.csv"), &rows)?;
    Ok(())
}

fn run_one(cli: &Cli, cfg: &RunConfig, seed: u64, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    match &cli.command {
        Command::Simulate { log_episodes } => simulate(cfg, seed, dir, *log_episodes),
        Command::Cluster { logs, session_gap, .. } => cluster(cfg, seed, dir, logs, *session_gap),
        Command::Train {
            env,
            dataset,
            clusters,
            resume,
            ..
        } => train_cmd(cfg, seed, dir, *env, dataset.as_deref(), clusters.as_deref(), resume.as_deref()),
        Command::Eval { checkpoint, .. } => eval_cmd(cfg, seed, dir, checkpoint),
        Command::Fairness { checkpoints, .. } => fairness_cmd(cfg, seed, dir, checkpoints),
        Command::Cost { .. } => cost_cmd(cfg, dir),
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    ensure!(common.runs >= 1, "--runs must be at least 1");
    let inputs = cli.command.inputs();
    for p in common.config.iter().chain(&inputs) {
        ensure!(p.exists(), "input {} does not exist", p.display());
    }
    let cfg = load_config(common, &cli.command)?;
    ensure!(
        !common.out.exists(),
        "output directory {} already exists",
        common.out.display()
    );
    let staging = {
        let name = common
            .out
            .file_name()
            .context("--out needs a final path component")?
            .to_string_lossy()
            .into_owned();
        common.out.with_file_name(format!(".{name}.partial-{}", std::process::id()))
    };
    std::fs::create_dir_all(&staging).with_context(|| format!("creating {}", staging.display()))?;

    let result = (|| -> Result<()> {
        let input_refs = inputs
            .iter()
            .chain(&common.config)
            .map(|p| Ok(InputRef { path: p.clone(), sha256: sha256_file(p)? }))
            .collect::<Result<Vec<_>>>()?;
        let seeds: Vec<u64> = (0..common.runs).map(|i| common.seed + i).collect();
        let results = par_map(seeds.clone(), common.jobs, |seed| {
            run_one(&cli, &cfg, seed, &run_dir(&staging, seed, common.runs))
        });
        for (seed, r) in seeds.iter().zip(results) {
            r.with_context(|| format!("run with seed {seed}"))?;
        }
        let args: Vec<String> = std::env::args().collect();
        write_json(
            &staging.join("manifest.json"),
            &RunManifest {
                subcommand: cli.command.name(),
                args,
                config_path: common.config.as_deref(),
                config: &cfg,
                seed: common.seed,
                runs: common.runs,
                out: &common.out,
                inputs: input_refs,
                version: env!("CARGO_PKG_VERSION"),
            },
        )?;
        Ok(())
    })();
    match result {
        Ok(()) => {
            std::fs::rename(&staging, &common.out)
                .with_context(|| format!("moving results into {}", common.out.display()))?;
            Ok(())
        }
        Err(e) => {
            let _ = std::fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
