use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Dqn,
    Ppo,
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dqn" => Ok(Self::Dqn),
            "ppo" => Ok(Self::Ppo),
            other => Err(Error::invalid(format!("unknown agent {other:?}; expected dqn or ppo"))),
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dqn => "dqn",
            Self::Ppo => "ppo",
        })
    }
}

/// Hyperparameters for both learners; fields a learner does not use are
/// ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub agent: AgentKind,
    pub hidden: Vec<usize>,
    /// State window length fed to the network.
    pub history: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_range: f64,
    pub batch_size: usize,
    /// PPO rollout length.
    pub n_steps: usize,
    pub n_epochs: usize,
    pub buffer_size: usize,
    /// DQN steps collected before the first update.
    pub learning_starts: u64,
    pub target_update_interval: u64,
    pub train_freq: u64,
    pub exploration_fraction: f64,
    pub final_epsilon: f64,
    pub max_grad_norm: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub normalize_advantage: bool,
    /// PPO: divide rewards by the running deviation of the discounted return
    /// before computing advantages, keeping value targets near unit scale.
    pub scale_rewards: bool,
    pub total_steps: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::ppo()
    }
}

impl TrainConfig {
    pub fn ppo() -> Self {
        Self {
            agent: AgentKind::Ppo,
            hidden: vec![128, 128],
            history: crate::model::DEFAULT_HISTORY,
            learning_rate: 3e-4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_range: 0.2,
            batch_size: 64,
            n_steps: 2048,
            n_epochs: 10,
            buffer_size: 10_000,
            learning_starts: 1000,
            target_update_interval: 1000,
            train_freq: 4,
            exploration_fraction: 0.1,
            final_epsilon: 0.02,
            max_grad_norm: 0.5,
            vf_coef: 0.5,
            ent_coef: 0.0,
            normalize_advantage: true,
            scale_rewards: true,
            total_steps: 200_000,
            seed: 0,
        }
    }

    pub fn dqn() -> Self {
        Self {
            agent: AgentKind::Dqn,
            learning_rate: 1e-3,
            batch_size: 32,
            max_grad_norm: 10.0,
            scale_rewards: false,
            total_steps: 300_000,
            ..Self::ppo()
        }
    }

    pub fn for_agent(agent: AgentKind) -> Self {
        match agent {
            AgentKind::Dqn => Self::dqn(),
            AgentKind::Ppo => Self::ppo(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(Error::Config {
                key: format!("train.{key}"),
                reason: reason.into(),
            })
        };
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", "must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda", "must lie in [0, 1]");
        }
        if !(self.clip_range > 0.0) {
            return bad("clip_range", "must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("max_grad_norm", "must be positive");
        }
        for (key, v) in [
            ("batch_size", self.batch_size),
            ("n_steps", self.n_steps),
            ("n_epochs", self.n_epochs),
            ("buffer_size", self.buffer_size),
            ("history", self.history),
        ] {
            if v == 0 {
                return bad(key, "must be at least 1");
            }
        }
        if self.target_update_interval == 0 || self.train_freq == 0 {
            return bad("train_freq", "intervals must be at least 1");
        }
        if self.hidden.contains(&0) {
            return bad("hidden", "layer widths must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.exploration_fraction) || !(0.0..=1.0).contains(&self.final_epsilon) {
            return bad("exploration_fraction", "exploration settings must lie in [0, 1]");
        }
        if self.vf_coef < 0.0 || self.ent_coef < 0.0 {
            return bad("vf_coef", "loss coefficients must be non-negative");
        }
        if self.agent == AgentKind::Ppo && self.n_steps < self.batch_size {
            return bad("n_steps", "rollout shorter than batch size");
        }
        Ok(())
    }

    /// Short stable digest of the configuration, stored in checkpoints.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let h = json.iter().fold(0xcbf2_9ce4_8422_2325_u64, |h, &b| {
            (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
        });
        format!("{h:016x}")
    }
}
