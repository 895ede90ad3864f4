//! The fairness/efficiency and throughput-per-energy objectives, and the
//! dead-band difference reward that turns either metric into `{x, 0, y}`.
//!
//! Throughput enters every formula in Gbit/s.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MiObservation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardKind {
    /// Windowed mean of the loss-penalised, stream-discounted utility.
    FairnessEfficiency,
    /// Mean throughput over the window's peak energy.
    ThroughputEnergy,
}

impl std::str::FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fe" | "fairness" | "fairness_efficiency" => Ok(RewardKind::FairnessEfficiency),
            "te" | "energy" | "throughput_energy" => Ok(RewardKind::ThroughputEnergy),
            other => Err(Error::invalid(format!("unknown reward kind `{other}` (expected fe|te)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub kind: RewardKind,
    /// Per-stream discount base `K > 1`.
    pub k_const: f64,
    /// Loss penalty weight `B`.
    pub b_const: f64,
    /// Scaling constant of the energy-efficiency metric.
    pub sc_const: f64,
    /// Dead band on metric changes.
    pub epsilon: f64,
    pub pos_reward: f64,
    pub neg_reward: f64,
    /// Monitoring intervals averaged per metric.
    pub window_n: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            kind: RewardKind::FairnessEfficiency,
            k_const: 1.02,
            b_const: 100.0,
            sc_const: 10.0,
            epsilon: 0.05,
            pos_reward: 2.0,
            // A penalty of at least twice the bonus: with x = -y, stepping up
            // by two and back down in single steps (or the reverse) earns a
            // net bonus every cycle without improving the metric.
            neg_reward: -4.0,
            window_n: 1,
        }
    }
}

impl RewardConfig {
    pub fn with_kind(kind: RewardKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| Error::Config {
            key: format!("reward.{key}"),
            reason: reason.into(),
        };
        if !(self.k_const > 1.0) {
            return Err(bad("k_const", "must exceed 1"));
        }
        if !(self.pos_reward > 0.0) {
            return Err(bad("pos_reward", "must be positive"));
        }
        if !(self.neg_reward < 0.0) {
            return Err(bad("neg_reward", "must be negative"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(bad("epsilon", "must be non-negative"));
        }
        if self.window_n < 1 {
            return Err(bad("window_n", "must be at least 1"));
        }
        Ok(())
    }
}

/// `T / K^(cc*p) - T*L*B` with `T` in Gbit/s.
pub fn utility(throughput: f64, loss: f64, cc: u32, p: u32, k_const: f64, b_const: f64) -> f64 {
    let t = throughput / 1e9;
    let streams = f64::from(cc) * f64::from(p);
    t / k_const.powf(streams) - t * loss * b_const
}

/// Utility of a single observation under `cfg`.
pub fn observation_utility(obs: &MiObservation, cfg: &RewardConfig) -> f64 {
    utility(obs.throughput, obs.plr, obs.cc, obs.p, cfg.k_const, cfg.b_const)
}

fn check_window(window: &[MiObservation], cfg: &RewardConfig) -> Result<()> {
    if window.len() != cfg.window_n {
        return Err(Error::DimensionMismatch {
            expected: cfg.window_n,
            actual: window.len(),
        });
    }
    Ok(())
}

/// Arithmetic mean of per-interval utilities over exactly `window_n` intervals.
pub fn mean_utility(window: &[MiObservation], cfg: &RewardConfig) -> Result<f64> {
    check_window(window, cfg)?;
    let sum: f64 = window.iter().map(|o| observation_utility(o, cfg)).sum();
    Ok(sum / window.len() as f64)
}

/// `mean(T) * SC / max(E)` over exactly `window_n` intervals.
pub fn energy_efficiency(window: &[MiObservation], cfg: &RewardConfig) -> Result<f64> {
    check_window(window, cfg)?;
    let peak = window.iter().map(|o| o.energy).fold(0.0_f64, f64::max);
    if !(peak > 0.0) {
        return Err(Error::invalid("energy window is all zero"));
    }
    let mean_t = window.iter().map(|o| o.throughput / 1e9).sum::<f64>() / window.len() as f64;
    Ok(mean_t * cfg.sc_const / peak)
}

/// Maps a metric change onto `pos_reward`, `neg_reward` or zero.
pub fn diff_reward(curr_metric: f64, prev_metric: f64, cfg: &RewardConfig) -> f64 {
    let d = curr_metric - prev_metric;
    if d > cfg.epsilon {
        cfg.pos_reward
    } else if d < -cfg.epsilon {
        cfg.neg_reward
    } else {
        0.0
    }
}

/// Metric of the configured kind for a full window.
pub fn metric(kind: RewardKind, window: &[MiObservation], cfg: &RewardConfig) -> Result<f64> {
    match kind {
        RewardKind::FairnessEfficiency => mean_utility(window, cfg),
        RewardKind::ThroughputEnergy => energy_efficiency(window, cfg),
    }
}

/// Computes the metric and its difference reward; `prev_metric = None`
/// bootstraps the episode with a zero reward.
pub fn reward_step(
    kind: RewardKind,
    window: &[MiObservation],
    prev_metric: Option<f64>,
    cfg: &RewardConfig,
) -> Result<(f64, f64)> {
    let m = metric(kind, window, cfg)?;
    let prev = prev_metric.unwrap_or(m);
    Ok((diff_reward(m, prev, cfg), m))
}

/// Threads the observation window and previous metric through an episode.
///
/// Until `window_n` observations have arrived the window is padded with the
/// earliest one, matching how state windows are padded.
#[derive(Debug, Clone)]
pub struct RewardTracker {
    cfg: RewardConfig,
    window: VecDeque<MiObservation>,
    prev_metric: Option<f64>,
}

impl RewardTracker {
    pub fn new(cfg: RewardConfig) -> Self {
        Self {
            window: VecDeque::with_capacity(cfg.window_n),
            cfg,
            prev_metric: None,
        }
    }

    pub fn config(&self) -> &RewardConfig {
        &self.cfg
    }

    pub fn reset(&mut self) {
        self.window.clear();
        self.prev_metric = None;
    }

    /// Pushes `obs` and returns `(reward, metric)`.
    pub fn observe(&mut self, obs: &MiObservation) -> Result<(f64, f64)> {
        if self.window.is_empty() {
            self.window.extend(std::iter::repeat_n(*obs, self.cfg.window_n));
        } else {
            self.window.pop_front();
            self.window.push_back(*obs);
        }
        let window = self.window.make_contiguous();
        let (r, m) = reward_step(self.cfg.kind, window, self.prev_metric, &self.cfg)?;
        self.prev_metric = Some(m);
        Ok((r, m))
    }
}
