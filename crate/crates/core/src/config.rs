//! The single JSON document that configures a run, one section per module.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::TrainConfig;
use crate::env::SyntheticEnvConfig;
use crate::error::{Error, Result};
use crate::harness::CostModel;
use crate::kmeans::KMeansConfig;
use crate::model::TransferParams;
use crate::rewards::RewardConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Settings to hold; empty means every `(v, v)` within bounds.
    pub grid: Vec<TransferParams>,
    pub mis: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { grid: Vec::new(), mis: 600 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FairnessConfig {
    pub duration: u64,
    /// Start interval of each flow, in checkpoint order.
    pub starts: Vec<u64>,
    /// Optional stop interval of each flow.
    pub stops: Vec<Option<u64>>,
}

impl Default for FairnessConfig {
    fn default() -> Self {
        Self {
            duration: 400,
            starts: vec![0, 40, 80],
            stops: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub models: Vec<NamedCost>,
    /// Inference steps per transfer.
    pub steps_per_transfer: u64,
    pub transfers: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCost {
    pub name: String,
    #[serde(flatten)]
    pub cost: CostModel,
}

impl Default for CostConfig {
    fn default() -> Self {
        let named = |name: &str, train_energy, inference_energy| NamedCost {
            name: name.into(),
            cost: CostModel {
                train_energy,
                inference_energy,
            },
        };
        Self {
            models: vec![named("dqn", 131_000.0, 0.098), named("ppo", 158_000.0, 0.088)],
            steps_per_transfer: 600,
            transfers: vec![1, 10, 100, 1000, 10_000, 100_000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: SyntheticEnvConfig,
    pub reward: RewardConfig,
    pub train: TrainConfig,
    pub cluster: KMeansConfig,
    pub sweep: SweepConfig,
    pub eval: EvalConfig,
    pub fairness: FairnessConfig,
    pub cost: CostConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.reward.validate()?;
        self.train.validate()?;
        self.cluster.validate()?;
        if self.sweep.mis == 0 {
            return Err(Error::Config {
                key: "sweep.mis".into(),
                reason: "must be at least 1".into(),
            });
        }
        if let Some(p) = self.sweep.grid.iter().find(|p| !self.env.bounds.contains(**p)) {
            return Err(Error::Config {
                key: "sweep.grid".into(),
                reason: format!("{p:?} outside bounds"),
            });
        }
        if self.eval.episodes == 0 {
            return Err(Error::Config {
                key: "eval.episodes".into(),
                reason: "must be at least 1".into(),
            });
        }
        if self.cost.steps_per_transfer == 0 || self.cost.transfers.contains(&0) {
            return Err(Error::Config {
                key: "cost.transfers".into(),
                reason: "counts must be at least 1".into(),
            });
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config {
            key: "<document>".into(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::from_json(r#"{"env": {"horizonn": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("horizonn"), "{err}");
    }

    #[test]
    fn invalid_value_names_key() {
        let err = RunConfig::from_json(r#"{"env": {"link": {"capacity_b": -1}}}"#).unwrap_err();
        assert!(err.to_string().contains("link."), "{err}");
    }
}
