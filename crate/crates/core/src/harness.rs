//! Training loop, evaluation rollouts, static sweeps, the shared-link
//! fairness experiment and amortized cost.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::dqn::{dqn_select, dqn_update, epsilon_at, target_sync};
use crate::agents::ppo::{ppo_select, ppo_update, ReturnScaler, Rollout};
use crate::agents::{Adam, AgentKind, Policy, ReplayBuffer, TrainConfig, Transition};
use crate::env::{Background, BgPhase, EnvStep, Environment, SyntheticEnv, SyntheticEnvConfig, SYNTHETIC_EPOCH};
use crate::error::{Error, Result};
use crate::model::{apply_action, Action, FeatureTracker, MiObservation, StateFeature, StateWindow, TransferParams};
use crate::net::{link_tick, FlowState};
use crate::rewards::{RewardConfig, RewardTracker};

/// Anything that picks an action from a state window.
pub trait Controller {
    fn act(&mut self, window: &StateWindow) -> Result<Action>;
}

impl Controller for Policy {
    fn act(&mut self, window: &StateWindow) -> Result<Action> {
        Policy::act(self, window)
    }
}

/// Always plays the same action.
#[derive(Debug, Clone, Copy)]
pub struct Scripted(pub Action);

impl Controller for Scripted {
    fn act(&mut self, _: &StateWindow) -> Result<Action> {
        Ok(self.0)
    }
}

/// Uniformly random actions, for exploration logs.
#[derive(Debug, Clone)]
pub struct RandomController(pub ChaCha8Rng);

impl RandomController {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl Controller for RandomController {
    fn act(&mut self, _: &StateWindow) -> Result<Action> {
        Ok(Action::ALL[self.0.random_range(0..Action::COUNT)])
    }
}

impl<C: Controller + ?Sized> Controller for Box<C> {
    fn act(&mut self, window: &StateWindow) -> Result<Action> {
        (**self).act(window)
    }
}

/// Per-episode record of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStat {
    pub episode: usize,
    pub end_step: u64,
    pub episode_return: f64,
    pub mean_throughput: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub curve: Vec<EpisodeStat>,
    /// One entry per optimizer update (DQN) or per rollout (PPO).
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn returns(&self) -> Vec<f64> {
        self.curve.iter().map(|e| e.episode_return).collect()
    }
}

struct EpisodeState {
    window: StateWindow,
    tracker: RewardTracker,
    ret: f64,
    tput_sum: f64,
    steps: u64,
}

impl EpisodeState {
    fn start(first: &EnvStep, history: usize, reward: &RewardConfig) -> Result<Self> {
        let mut tracker = RewardTracker::new(reward.clone());
        if let Some(o) = &first.obs {
            tracker.observe(o)?;
        }
        Ok(Self {
            window: StateWindow::filled(first.feature, history),
            tracker,
            ret: 0.0,
            tput_sum: 0.0,
            steps: 0,
        })
    }

    /// Folds an environment step in and returns its reward.
    fn advance(&mut self, step: &EnvStep) -> Result<f64> {
        let obs = step.obs.as_ref().ok_or(Error::Empty("step observation"))?;
        let (r, _) = self.tracker.observe(obs)?;
        self.window.push(step.feature);
        self.ret += r;
        self.tput_sum += obs.throughput;
        self.steps += 1;
        Ok(r)
    }

    fn stat(&self, episode: usize, end_step: u64) -> EpisodeStat {
        EpisodeStat {
            episode,
            end_step,
            episode_return: self.ret,
            mean_throughput: self.tput_sum / self.steps.max(1) as f64,
        }
    }
}

fn guard(policy: &Policy, step: u64) -> Result<()> {
    if policy.net.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            step,
            detail: format!("non-finite parameter in {:?} network", policy.agent),
        })
    }
}

/// Runs `cfg.total_steps` environment steps of the configured learner.
/// `init` resumes from an existing policy; optimizer and exploration state
/// always start fresh.
pub fn train<E: Environment + ?Sized>(
    env: &mut E,
    cfg: &TrainConfig,
    reward: &RewardConfig,
    init: Option<Policy>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    reward.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let policy = match init {
        Some(p) => {
            if p.agent != cfg.agent || p.history != cfg.history {
                return Err(Error::invalid("initial policy does not match the training config"));
            }
            p
        }
        None => Policy::init(cfg, env.bounds(), &mut rng)?,
    };
    if cfg.total_steps == 0 {
        return Ok(TrainOutcome {
            policy,
            curve: Vec::new(),
            losses: Vec::new(),
        });
    }
    match cfg.agent {
        AgentKind::Dqn => train_dqn(env, cfg, reward, policy, &mut rng),
        AgentKind::Ppo => train_ppo(env, cfg, reward, policy, &mut rng),
    }
}

fn train_dqn<E: Environment + ?Sized>(
    env: &mut E,
    cfg: &TrainConfig,
    reward: &RewardConfig,
    mut policy: Policy,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    let mut target = policy.net.clone();
    let mut opt = Adam::new(&policy.net, cfg.learning_rate);
    let mut buffer = ReplayBuffer::new(cfg.buffer_size);
    let mut curve = Vec::new();
    let mut losses = Vec::new();
    let mut ep = EpisodeState::start(&env.reset(), cfg.history, reward)?;
    let mut input = policy.encode(&ep.window)?;
    for step in 1..=cfg.total_steps {
        let eps = epsilon_at(step - 1, cfg.total_steps, cfg.exploration_fraction, cfg.final_epsilon);
        let action = dqn_select(&policy.net, &input, eps, rng)?;
        let st = env.step(action)?;
        let r = ep.advance(&st)?;
        let next_input = policy.encode(&ep.window)?;
        // Horizon cut-offs are truncations, so the TD target still bootstraps.
        buffer.push(Transition {
            state: input,
            action: action.index(),
            reward: r,
            next_state: next_input.clone(),
            done: false,
        });
        if step > cfg.learning_starts && step % cfg.train_freq == 0 && buffer.len() >= cfg.batch_size {
            let batch = buffer.sample(cfg.batch_size, rng);
            let loss = dqn_update(&mut policy.net, &target, &batch, cfg.gamma, &mut opt, cfg.max_grad_norm)?;
            losses.push(loss);
            guard(&policy, step)?;
        }
        target_sync(&policy.net, &mut target, cfg.target_update_interval, step);
        if st.done {
            curve.push(ep.stat(curve.len(), step));
            ep = EpisodeState::start(&env.reset(), cfg.history, reward)?;
            input = policy.encode(&ep.window)?;
        } else {
            input = next_input;
        }
    }
    Ok(TrainOutcome { policy, curve, losses })
}

fn train_ppo<E: Environment + ?Sized>(
    env: &mut E,
    cfg: &TrainConfig,
    reward: &RewardConfig,
    mut policy: Policy,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    let mut opt = Adam::new(&policy.net, cfg.learning_rate);
    let mut rollout = Rollout::default();
    let mut scaler = ReturnScaler::new(cfg.gamma);
    let mut curve = Vec::new();
    let mut losses = Vec::new();
    let mut ep = EpisodeState::start(&env.reset(), cfg.history, reward)?;
    let mut input = policy.encode(&ep.window)?;
    for step in 1..=cfg.total_steps {
        let (action, logp, value) = ppo_select(&policy.net, &input, false, rng)?;
        let st = env.step(action)?;
        let raw = ep.advance(&st)?;
        let mut r = if cfg.scale_rewards { scaler.scale(raw, st.done) } else { raw };
        let next_input = policy.encode(&ep.window)?;
        if st.done {
            // bootstrap through the horizon cut-off
            let (_, v_next) = crate::agents::ppo::policy_value(&policy.net, &next_input)?;
            r += cfg.gamma * v_next;
        }
        rollout.push(input, action.index(), logp, r, value, st.done);
        if st.done {
            curve.push(ep.stat(curve.len(), step));
            ep = EpisodeState::start(&env.reset(), cfg.history, reward)?;
            input = policy.encode(&ep.window)?;
        } else {
            input = next_input;
        }
        if rollout.len() == cfg.n_steps {
            let (_, last_value) = crate::agents::ppo::policy_value(&policy.net, &input)?;
            let stats = ppo_update(&mut policy.net, &mut opt, &rollout, last_value, cfg, rng)?;
            losses.push(stats.total(cfg.vf_coef, cfg.ent_coef));
            guard(&policy, step)?;
            rollout.clear();
        }
    }
    Ok(TrainOutcome { policy, curve, losses })
}

/// One step of an evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub window: Vec<StateFeature>,
    pub action: Action,
    pub reward: f64,
    pub obs: MiObservation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
    pub episode_return: f64,
    pub mean_throughput: f64,
    pub total_energy: f64,
    pub mean_streams: f64,
}

/// Plays one episode with `controller`.
pub fn run_episode<E, C>(env: &mut E, controller: &mut C, reward: &RewardConfig, history: usize) -> Result<EpisodeTrace>
where
    E: Environment + ?Sized,
    C: Controller + ?Sized,
{
    let mut ep = EpisodeState::start(&env.reset(), history, reward)?;
    let mut steps = Vec::new();
    loop {
        let window: Vec<StateFeature> = ep.window.iter().copied().collect();
        let action = controller.act(&ep.window)?;
        let st = env.step(action)?;
        let r = ep.advance(&st)?;
        steps.push(TraceStep {
            window,
            action,
            reward: r,
            obs: st.obs.expect("checked in advance"),
        });
        if st.done {
            break;
        }
    }
    let n = steps.len() as f64;
    Ok(EpisodeTrace {
        episode_return: steps.iter().map(|s| s.reward).sum(),
        mean_throughput: steps.iter().map(|s| s.obs.throughput).sum::<f64>() / n,
        total_energy: steps.iter().map(|s| s.obs.energy).sum(),
        mean_streams: steps.iter().map(|s| f64::from(s.obs.cc * s.obs.p)).sum::<f64>() / n,
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_throughput: f64,
    pub std_throughput: f64,
    /// Mean energy per episode.
    pub total_energy: f64,
    /// Joules per transferred bit.
    pub energy_per_bit: f64,
    pub mean_streams: f64,
    pub mean_return: f64,
    pub returns: Vec<f64>,
    /// Mean throughput of each episode.
    pub throughputs: Vec<f64>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Summarizes `traces`.
pub fn summarize(traces: &[EpisodeTrace]) -> Result<EvalSummary> {
    if traces.is_empty() {
        return Err(Error::Empty("episode list"));
    }
    let throughputs: Vec<f64> = traces.iter().map(|t| t.mean_throughput).collect();
    let returns: Vec<f64> = traces.iter().map(|t| t.episode_return).collect();
    let (mean_throughput, std_throughput) = mean_std(&throughputs);
    let energy: f64 = traces.iter().map(|t| t.total_energy).sum();
    let bits: f64 = traces
        .iter()
        .flat_map(|t| &t.steps)
        .map(|s| s.obs.throughput)
        .sum::<f64>();
    let n = traces.len() as f64;
    Ok(EvalSummary {
        episodes: traces.len(),
        mean_throughput,
        std_throughput,
        total_energy: energy / n,
        energy_per_bit: if bits > 0.0 { energy / bits } else { f64::INFINITY },
        mean_streams: traces.iter().map(|t| t.mean_streams).sum::<f64>() / n,
        mean_return: returns.iter().sum::<f64>() / n,
        returns,
        throughputs,
    })
}

/// Greedy rollouts of `controller` over `episodes` episodes.
pub fn evaluate<E, C>(env: &mut E, controller: &mut C, episodes: usize, reward: &RewardConfig, history: usize) -> Result<(EvalSummary, Vec<EpisodeTrace>)>
where
    E: Environment + ?Sized,
    C: Controller + ?Sized,
{
    let traces = (0..episodes)
        .map(|_| run_episode(env, controller, reward, history))
        .collect::<Result<Vec<_>>>()?;
    Ok((summarize(&traces)?, traces))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cc: u32,
    pub p: u32,
    pub mean_throughput: f64,
    pub mean_energy: f64,
}

/// Every coupled setting `(v, v)` plus the corners of the bounds; a useful
/// default grid.
pub fn diagonal_grid(cfg: &SyntheticEnvConfig) -> Vec<TransferParams> {
    let b = cfg.bounds;
    let lo = b.cc_min.max(b.p_min);
    let hi = b.cc_max.min(b.p_max);
    (lo..=hi)
        .map(|v| TransferParams::new(v, v))
        .filter(|&p| b.contains(p))
        .collect()
}

/// Holds each setting for `mis` intervals (common random numbers across
/// settings) and reports mean throughput and energy.
pub fn sweep_static(cfg: &SyntheticEnvConfig, grid: &[TransferParams], mis: u64, seed: u64) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Empty("sweep grid"));
    }
    if mis == 0 {
        return Err(Error::invalid("sweep needs at least one interval"));
    }
    grid.iter()
        .map(|&params| {
            if !cfg.bounds.contains(params) {
                return Err(Error::invalid(format!("grid point {params:?} outside bounds")));
            }
            let env_cfg = SyntheticEnvConfig {
                initial: params,
                horizon: mis,
                ..cfg.clone()
            };
            let mut env = SyntheticEnv::new(env_cfg, seed)?;
            let trace = run_episode(&mut env, &mut Scripted(Action::Hold), &RewardConfig::default(), 1)?;
            Ok(SweepRow {
                cc: params.cc,
                p: params.p,
                mean_throughput: trace.mean_throughput,
                mean_energy: trace.total_energy / trace.steps.len() as f64,
            })
        })
        .collect()
}

/// `(sum T)^2 / (n * sum T^2)`.
pub fn jain_index(throughputs: &[f64]) -> Result<f64> {
    if throughputs.is_empty() {
        return Err(Error::Empty("throughput list"));
    }
    if throughputs.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::invalid("throughputs must be finite and non-negative"));
    }
    let sum: f64 = throughputs.iter().sum();
    let sq: f64 = throughputs.iter().map(|t| t * t).sum();
    if sq == 0.0 {
        return Err(Error::invalid("all throughputs are zero"));
    }
    Ok(sum * sum / (throughputs.len() as f64 * sq))
}

/// One flow in a shared-link run, active on `[start, stop)`.
pub struct FlowSpec {
    pub controller: Box<dyn Controller + Send>,
    pub start: u64,
    pub stop: Option<u64>,
    pub reward: RewardConfig,
    pub history: usize,
}

/// One row of per-interval metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub time: f64,
    pub flow_id: usize,
    pub cc: u32,
    pub p: u32,
    pub throughput_bps: f64,
    pub plr: f64,
    pub rtt_s: f64,
    pub energy_j: f64,
    pub reward: f64,
    pub jfi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairnessOutcome {
    /// `throughput[t][i]`: flow `i` in interval `t`, `None` when inactive.
    pub throughput: Vec<Vec<Option<f64>>>,
    pub streams: Vec<Vec<Option<u32>>>,
    /// JFI over active flows; `None` when no flow is active.
    pub jfi: Vec<Option<f64>>,
    pub background: Vec<f64>,
    /// Largest `(sum of flows + background used) / capacity` seen.
    pub peak_utilization: f64,
    pub rows: Vec<MetricRow>,
}

impl FairnessOutcome {
    /// Mean JFI over intervals `[from, to)` where it is defined.
    pub fn mean_jfi(&self, from: usize, to: usize) -> Option<f64> {
        let vals: Vec<f64> = self.jfi[from.min(self.jfi.len())..to.min(self.jfi.len())]
            .iter()
            .flatten()
            .copied()
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Mean streams of flow `i` over intervals `[from, to)` where it is active.
    pub fn mean_streams(&self, flow: usize, from: usize, to: usize) -> Option<f64> {
        let vals: Vec<f64> = self.streams[from.min(self.streams.len())..to.min(self.streams.len())]
            .iter()
            .filter_map(|row| row[flow])
            .map(f64::from)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

struct LiveFlow {
    state: FlowState,
    features: FeatureTracker,
    window: StateWindow,
    rewards: RewardTracker,
}

/// Advances all flows in lockstep on one link for `duration` intervals.
/// Each flow starts from `cfg.initial` and sees only its own measurements.
pub fn fairness_experiment(flows: &mut [FlowSpec], cfg: &SyntheticEnvConfig, duration: u64, seed: u64) -> Result<FairnessOutcome> {
    cfg.validate()?;
    if flows.len() < 2 {
        return Err(Error::invalid("fairness runs need at least two flows"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut background = Background::new();
    let mut live: Vec<Option<LiveFlow>> = flows.iter().map(|_| None).collect();
    let mut out = FairnessOutcome {
        throughput: Vec::new(),
        streams: Vec::new(),
        jfi: Vec::new(),
        background: Vec::new(),
        peak_utilization: 0.0,
        rows: Vec::new(),
    };
    for t in 0..duration {
        let now = SYNTHETIC_EPOCH + (t + 1) as f64 * cfg.link.mi_duration;
        let mut active = Vec::new();
        for (i, spec) in flows.iter_mut().enumerate() {
            let on = t >= spec.start && spec.stop.is_none_or(|s| t < s);
            if !on {
                live[i] = None;
                continue;
            }
            match live[i].as_mut() {
                Some(lf) => {
                    let a = spec.controller.act(&lf.window)?;
                    lf.state.params = apply_action(lf.state.params, a, &cfg.bounds);
                }
                None => {
                    live[i] = Some(LiveFlow {
                        state: FlowState::new(cfg.initial),
                        features: FeatureTracker::new(),
                        window: StateWindow::filled(
                            StateFeature {
                                plr: 0.0,
                                rtt_gradient: 0.0,
                                rtt_ratio: 1.0,
                                cc: cfg.initial.cc,
                                p: cfg.initial.p,
                            },
                            spec.history,
                        ),
                        rewards: RewardTracker::new(spec.reward.clone()),
                    });
                }
            }
            active.push(i);
        }
        let bg = background.level_at(t, &cfg.link, &cfg.bg_schedule, &mut rng);
        out.background.push(bg);
        let mut tput_row = vec![None; flows.len()];
        let mut stream_row = vec![None; flows.len()];
        if active.is_empty() {
            out.throughput.push(tput_row);
            out.streams.push(stream_row);
            out.jfi.push(None);
            continue;
        }
        let mut states: Vec<FlowState> = active
            .iter()
            .map(|&i| live[i].as_ref().expect("active").state.clone())
            .collect();
        let res = link_tick(&cfg.link, &cfg.energy, &mut states, bg, now, &mut rng)?;
        let util = (res.total_throughput() + res.bg_used) / cfg.link.capacity_b;
        out.peak_utilization = out.peak_utilization.max(util);
        let tputs: Vec<f64> = res.observations.iter().map(|o| o.throughput).collect();
        let jfi = jain_index(&tputs).ok();
        for ((&i, st), obs) in active.iter().zip(states).zip(&res.observations) {
            let lf = live[i].as_mut().expect("active");
            let first = lf.features.session_min_rtt().is_none();
            lf.state = st;
            let feat = lf.features.observe(obs);
            if first {
                lf.window = StateWindow::filled(feat, flows[i].history);
            } else {
                lf.window.push(feat);
            }
            let (reward, _) = lf.rewards.observe(obs)?;
            tput_row[i] = Some(obs.throughput);
            stream_row[i] = Some(obs.cc * obs.p);
            out.rows.push(MetricRow {
                time: now,
                flow_id: i,
                cc: obs.cc,
                p: obs.p,
                throughput_bps: obs.throughput,
                plr: obs.plr,
                rtt_s: obs.mean_rtt,
                energy_j: obs.energy,
                reward,
                jfi: jfi.unwrap_or(f64::NAN),
            });
        }
        out.throughput.push(tput_row);
        out.streams.push(stream_row);
        out.jfi.push(jfi);
    }
    Ok(out)
}

/// Scripted background that is idle, then saturates the link from
/// `start_mi` until `stop_mi`.
pub fn saturation_schedule(start_mi: u64, stop_mi: u64, level: f64) -> Vec<BgPhase> {
    vec![
        BgPhase { start_mi: 0, level: 0.0 },
        BgPhase { start_mi, level },
        BgPhase { start_mi: stop_mi, level: 0.0 },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Joules spent training.
    pub train_energy: f64,
    /// Joules per inference step.
    pub inference_energy: f64,
}

/// Total energy of training plus `num_transfers * steps_per_transfer`
/// inferences, and that total per transfer.
pub fn amortized_cost(cost: &CostModel, steps_per_transfer: u64, num_transfers: u64) -> Result<(f64, f64)> {
    if steps_per_transfer == 0 || num_transfers == 0 {
        return Err(Error::invalid("steps per transfer and transfer count must be at least 1"));
    }
    if !(cost.train_energy >= 0.0 && cost.inference_energy >= 0.0) {
        return Err(Error::invalid("energies must be non-negative"));
    }
    let total = cost.train_energy + num_transfers as f64 * steps_per_transfer as f64 * cost.inference_energy;
    Ok((total, total / num_transfers as f64))
}

/// Number of inference steps at which two models' totals are equal, if
/// they cross.
pub fn break_even_steps(a: &CostModel, b: &CostModel) -> Option<f64> {
    let d_inf = a.inference_energy - b.inference_energy;
    if d_inf == 0.0 {
        return None;
    }
    let steps = (b.train_energy - a.train_energy) / d_inf;
    (steps > 0.0).then_some(steps)
}

/// Plays `episodes` episodes and returns each as a chronological session,
/// reset observation included.
pub fn collect_sessions<C: Controller + ?Sized>(env: &mut SyntheticEnv, controller: &mut C, episodes: usize, history: usize) -> Result<Vec<Vec<MiObservation>>> {
    let mut sessions = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let first = env.reset();
        let mut window = StateWindow::filled(first.feature, history);
        let mut session = vec![first.obs.expect("synthetic resets measure")];
        loop {
            let a = controller.act(&window)?;
            let st = env.step(a)?;
            window.push(st.feature);
            session.push(st.obs.expect("synthetic steps measure"));
            if st.done {
                break;
            }
        }
        sessions.push(session);
    }
    Ok(sessions)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Runs `f` over `items` on up to `jobs` threads, preserving order.
pub fn par_map<T, U, F>(items: Vec<T>, jobs: usize, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync,
{
    let jobs = jobs.max(1);
    if jobs == 1 || items.len() <= 1 {
        return items.into_iter().map(f).collect();
    }
    let n = items.len();
    let mut slots: Vec<Option<U>> = (0..n).map(|_| None).collect();
    let queue = std::sync::Mutex::new(items.into_iter().enumerate());
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..jobs.min(n) {
            s.spawn(|| loop {
                let next = queue.lock().expect("queue lock").next();
                let Some((i, item)) = next else { break };
                let u = f(item);
                results.lock().expect("result lock")[i] = Some(u);
            });
        }
    });
    slots.into_iter().map(|u| u.expect("every task ran")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jain_examples() {
        assert_eq!(jain_index(&[5.0, 5.0, 5.0]).unwrap(), 1.0);
        assert!((jain_index(&[9.0, 1.0]).unwrap() - 100.0 / 164.0).abs() < 1e-12);
        assert!((jain_index(&[8.0, 4.0, 4.0]).unwrap() - 256.0 / 288.0).abs() < 1e-12);
        assert!(jain_index(&[0.0, 0.0]).is_err());
        assert!(jain_index(&[]).is_err());
    }

    #[test]
    fn amortized_examples() {
        let dqn = CostModel {
            train_energy: 131_000.0,
            inference_energy: 0.098,
        };
        let (_, per) = amortized_cost(&dqn, 600, 1000).unwrap();
        assert!((per - 189.8).abs() < 1e-9);
        let ppo = CostModel {
            train_energy: 158_000.0,
            inference_energy: 0.088,
        };
        let be = break_even_steps(&dqn, &ppo).unwrap();
        assert!((be - 2.7e6).abs() / 2.7e6 < 1e-9);
        assert!(amortized_cost(&dqn, 0, 1).is_err());
    }

    #[test]
    fn hold_at_one_one_is_single_stream_rate() {
        let cfg = SyntheticEnvConfig {
            initial: TransferParams::new(1, 1),
            horizon: 20,
            ..SyntheticEnvConfig::default()
        };
        let rate = cfg.link.per_stream_rate;
        let mut env = SyntheticEnv::new(cfg, 0).unwrap();
        let (summary, _) = evaluate(&mut env, &mut Scripted(Action::Hold), 2, &RewardConfig::default(), 5).unwrap();
        assert!((summary.mean_throughput - rate).abs() < 1e-6);
    }

    #[test]
    fn symmetric_static_flows_are_fair() {
        let cfg = SyntheticEnvConfig::default();
        let mut flows: Vec<FlowSpec> = (0..2)
            .map(|_| FlowSpec {
                controller: Box::new(Scripted(Action::Hold)),
                start: 0,
                stop: None,
                reward: RewardConfig::default(),
                history: 5,
            })
            .collect();
        let out = fairness_experiment(&mut flows, &cfg, 50, 1).unwrap();
        assert!(out.jfi.iter().all(|j| *j == Some(1.0)));
    }

    #[test]
    fn par_map_keeps_order() {
        let v = par_map((0..20).collect(), 3, |x: i32| x * x);
        assert_eq!(v, (0..20).map(|x| x * x).collect::<Vec<_>>());
    }
}
