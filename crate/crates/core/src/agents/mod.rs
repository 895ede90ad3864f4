//! Learners built on a small from-scratch network.

pub mod config;
pub mod dqn;
pub mod nn;
pub mod ppo;
pub mod replay;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::{AgentKind, TrainConfig};
pub use nn::{Adam, ForwardCache, Gradients, Mlp};
pub use replay::{ReplayBuffer, Transition};

use crate::error::{Error, Result};
use crate::model::{Action, Bounds, StateWindow, FEATURE_DIM};

/// A network together with what is needed to feed it.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub agent: AgentKind,
    pub net: Mlp,
    pub history: usize,
    pub bounds: Bounds,
}

impl Policy {
    pub fn init<R: rand::Rng + ?Sized>(cfg: &TrainConfig, bounds: Bounds, rng: &mut R) -> Result<Self> {
        let out = match cfg.agent {
            AgentKind::Dqn => Action::COUNT,
            AgentKind::Ppo => ppo::PPO_OUTPUTS,
        };
        let mut sizes = vec![cfg.history * FEATURE_DIM];
        sizes.extend(&cfg.hidden);
        sizes.push(out);
        Ok(Self {
            agent: cfg.agent,
            net: Mlp::new(&sizes, rng)?,
            history: cfg.history,
            bounds,
        })
    }

    pub fn encode(&self, window: &StateWindow) -> Result<Vec<f64>> {
        if window.len() != self.history {
            return Err(Error::DimensionMismatch {
                expected: self.history,
                actual: window.len(),
            });
        }
        Ok(window.to_input(&self.bounds))
    }

    /// Greedy action: argmax Q for DQN, the mode for PPO.
    pub fn greedy(&self, input: &[f64]) -> Result<Action> {
        let out = self.net.predict(input)?;
        Ok(Action::from_index(dqn::argmax(&out[..Action::COUNT])).expect("index < 5"))
    }

    pub fn act(&self, window: &StateWindow) -> Result<Action> {
        self.greedy(&self.encode(window)?)
    }
}

/// Persisted form of a [`Policy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub agent: AgentKind,
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub history: usize,
    pub bounds: Bounds,
    pub config_fingerprint: String,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(policy: &Policy, cfg: &TrainConfig) -> Self {
        Self {
            agent: policy.agent,
            layer_sizes: policy.net.sizes().to_vec(),
            weights: policy.net.weights().to_vec(),
            biases: policy.net.biases().to_vec(),
            history: policy.history,
            bounds: policy.bounds,
            config_fingerprint: cfg.fingerprint(),
            seed: cfg.seed,
        }
    }

    /// Rebuilds the policy, checking every shape.
    pub fn into_policy(self) -> Result<Policy> {
        let expected_out = match self.agent {
            AgentKind::Dqn => Action::COUNT,
            AgentKind::Ppo => ppo::PPO_OUTPUTS,
        };
        let (first, last) = (self.layer_sizes.first().copied(), self.layer_sizes.last().copied());
        if first != Some(self.history * FEATURE_DIM) {
            return Err(Error::DimensionMismatch {
                expected: self.history * FEATURE_DIM,
                actual: first.unwrap_or(0),
            });
        }
        if last != Some(expected_out) {
            return Err(Error::DimensionMismatch {
                expected: expected_out,
                actual: last.unwrap_or(0),
            });
        }
        self.bounds.validate()?;
        Ok(Policy {
            agent: self.agent,
            net: Mlp::from_parts(self.layer_sizes, self.weights, self.biases)?,
            history: self.history,
            bounds: self.bounds,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip_and_shape_check() {
        let cfg = TrainConfig {
            hidden: vec![8],
            ..TrainConfig::dqn()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let policy = Policy::init(&cfg, Bounds::default(), &mut rng).unwrap();
        let ck = Checkpoint::new(&policy, &cfg);
        let back: Checkpoint = serde_json::from_str(&serde_json::to_string(&ck).unwrap()).unwrap();
        assert_eq!(back.clone().into_policy().unwrap(), policy);

        let mut bad = back.clone();
        bad.weights[0].pop();
        assert!(bad.into_policy().is_err());
        let mut bad = back;
        bad.agent = AgentKind::Ppo;
        assert!(bad.into_policy().is_err());
    }
}
