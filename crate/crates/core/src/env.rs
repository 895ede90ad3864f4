//! Episode interface shared by the synthetic link and the log emulator, and
//! the synthetic single-flow environment.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{apply_action, Action, Bounds, FeatureTracker, MiObservation, StateFeature, TransferParams};
use crate::net::{bg_sample, link_tick, EnergyConfig, FlowState, LinkConfig};

/// What an environment reports after a reset or a step.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    /// The measured interval; `None` when the environment starts from a
    /// stored state without a matching measurement.
    pub obs: Option<MiObservation>,
    pub feature: StateFeature,
    pub done: bool,
}

pub trait Environment {
    fn bounds(&self) -> Bounds;
    fn params(&self) -> TransferParams;
    fn reset(&mut self) -> EnvStep;
    fn step(&mut self, action: Action) -> Result<EnvStep>;
}

/// Background level forced from interval `start_mi` (counted from reset)
/// until the next phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BgPhase {
    pub start_mi: u64,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticEnvConfig {
    pub link: LinkConfig,
    pub energy: EnergyConfig,
    pub bounds: Bounds,
    pub initial: TransferParams,
    pub horizon: u64,
    /// Scripted background; when non-empty it replaces random sampling.
    pub bg_schedule: Vec<BgPhase>,
}

impl Default for SyntheticEnvConfig {
    fn default() -> Self {
        Self {
            link: LinkConfig::default(),
            energy: EnergyConfig::default(),
            bounds: Bounds::default(),
            initial: TransferParams::new(4, 4),
            horizon: 128,
            bg_schedule: Vec::new(),
        }
    }
}

impl SyntheticEnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        self.energy.validate()?;
        self.bounds.validate()?;
        if !self.bounds.contains(self.initial) {
            return Err(Error::Config {
                key: "env.initial".into(),
                reason: "initial parameters outside bounds".into(),
            });
        }
        if self.horizon == 0 {
            return Err(Error::Config {
                key: "env.horizon".into(),
                reason: "must be at least 1".into(),
            });
        }
        for ph in &self.bg_schedule {
            if !(0.0..=self.link.capacity_b).contains(&ph.level) {
                return Err(Error::Config {
                    key: "env.bg_schedule".into(),
                    reason: format!("level {} outside [0, capacity_b]", ph.level),
                });
            }
        }
        Ok(())
    }
}

/// Background traffic process: scripted phases or uniform levels held for
/// `bg_hold` seconds.
#[derive(Debug, Clone)]
pub struct Background {
    level: f64,
    remaining: u64,
}

impl Background {
    pub fn new() -> Self {
        Self { level: 0.0, remaining: 0 }
    }

    /// Level for interval `mi` (0-based since reset).
    pub fn level_at(&mut self, mi: u64, link: &LinkConfig, schedule: &[BgPhase], rng: &mut ChaCha8Rng) -> f64 {
        if !schedule.is_empty() {
            return schedule
                .iter()
                .filter(|ph| ph.start_mi <= mi)
                .max_by_key(|ph| ph.start_mi)
                .map_or(0.0, |ph| ph.level);
        }
        if self.remaining == 0 {
            self.level = bg_sample(rng, link);
            self.remaining = link.bg_hold_mis();
        }
        self.remaining -= 1;
        self.level
    }
}

impl Default for Background {
    fn default() -> Self {
        Self::new()
    }
}

/// Epoch offset for synthetic timestamps.
pub const SYNTHETIC_EPOCH: f64 = 1_700_000_000.0;

/// Seconds inserted between episodes so logged sessions stay separable.
pub const EPISODE_GAP: f64 = 3600.0;

/// One agent-controlled flow alone on the synthetic link.
#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    cfg: SyntheticEnvConfig,
    rng: ChaCha8Rng,
    flow: FlowState,
    tracker: FeatureTracker,
    background: Background,
    clock: f64,
    mi: u64,
    last_bg: f64,
}

impl SyntheticEnv {
    pub fn new(cfg: SyntheticEnvConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            flow: FlowState::new(cfg.initial),
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            tracker: FeatureTracker::new(),
            background: Background::new(),
            clock: SYNTHETIC_EPOCH - EPISODE_GAP,
            mi: 0,
            last_bg: 0.0,
        })
    }

    pub fn config(&self) -> &SyntheticEnvConfig {
        &self.cfg
    }

    /// Background level used in the most recent interval.
    pub fn background(&self) -> f64 {
        self.last_bg
    }

    pub fn flow(&self) -> &FlowState {
        &self.flow
    }

    fn tick(&mut self) -> Result<MiObservation> {
        let bg = self
            .background
            .level_at(self.mi, &self.cfg.link, &self.cfg.bg_schedule, &mut self.rng);
        self.last_bg = bg;
        self.clock += self.cfg.link.mi_duration;
        let res = link_tick(
            &self.cfg.link,
            &self.cfg.energy,
            std::slice::from_mut(&mut self.flow),
            bg,
            self.clock,
            &mut self.rng,
        )?;
        self.mi += 1;
        Ok(res.observations[0])
    }
}

impl Environment for SyntheticEnv {
    fn bounds(&self) -> Bounds {
        self.cfg.bounds
    }

    fn params(&self) -> TransferParams {
        self.flow.params
    }

    fn reset(&mut self) -> EnvStep {
        self.flow = FlowState::new(self.cfg.initial);
        self.tracker.reset();
        self.background = Background::new();
        self.mi = 0;
        self.clock += EPISODE_GAP;
        let obs = self.tick().expect("validated configuration ticks");
        EnvStep {
            feature: self.tracker.observe(&obs),
            obs: Some(obs),
            done: false,
        }
    }

    fn step(&mut self, action: Action) -> Result<EnvStep> {
        self.flow.params = apply_action(self.flow.params, action, &self.cfg.bounds);
        let obs = self.tick()?;
        Ok(EnvStep {
            feature: self.tracker.observe(&obs),
            obs: Some(obs),
            // the reset interval is not an agent step
            done: self.mi > self.cfg.horizon,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn episode_runs_for_horizon_steps() {
        let cfg = SyntheticEnvConfig {
            horizon: 10,
            ..SyntheticEnvConfig::default()
        };
        let mut env = SyntheticEnv::new(cfg, 3).unwrap();
        let first = env.reset();
        assert_eq!(first.feature.params(), TransferParams::new(4, 4));
        let mut steps = 0;
        loop {
            steps += 1;
            if env.step(Action::Hold).unwrap().done {
                break;
            }
        }
        assert_eq!(steps, 10);
    }

    #[test]
    fn schedule_overrides_sampling() {
        let cfg = SyntheticEnvConfig {
            bg_schedule: vec![
                BgPhase { start_mi: 0, level: 0.0 },
                BgPhase { start_mi: 3, level: 9e9 },
            ],
            ..SyntheticEnvConfig::default()
        };
        let mut env = SyntheticEnv::new(cfg, 1).unwrap();
        env.reset();
        assert_eq!(env.background(), 0.0);
        env.step(Action::Hold).unwrap();
        env.step(Action::Hold).unwrap();
        assert_eq!(env.background(), 0.0);
        env.step(Action::Hold).unwrap();
        assert_eq!(env.background(), 9e9);
    }

    #[test]
    fn background_is_held() {
        let cfg = SyntheticEnvConfig::default();
        let mut env = SyntheticEnv::new(cfg.clone(), 5).unwrap();
        env.reset();
        let hold = cfg.link.bg_hold_mis() as usize;
        let mut levels = vec![env.background()];
        for _ in 0..(2 * hold) {
            env.step(Action::Hold).unwrap();
            levels.push(env.background());
        }
        assert!(levels[..hold].iter().all(|&l| l == levels[0]));
    }

    #[test]
    fn same_seed_same_trace() {
        let run = |seed| {
            let mut env = SyntheticEnv::new(SyntheticEnvConfig::default(), seed).unwrap();
            env.reset();
            (0..200)
                .map(|i| env.step(Action::ALL[i % 5]).unwrap().obs.unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
    }
}
