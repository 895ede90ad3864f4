//! Learning-based tuning of file-transfer concurrency and parallelism.
//!
//! A synthetic bottleneck link, difference-based rewards, a transfer-log
//! format with a cluster-lookup emulator built from it, DQN and PPO
//! learners, and an experiment harness.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod config;
pub mod emulator;
pub mod env;
pub mod error;
pub mod harness;
pub mod kmeans;
pub mod model;
pub mod net;
pub mod rewards;
pub mod translog;

pub use agents::{AgentKind, Checkpoint, Policy, TrainConfig};
pub use config::RunConfig;
pub use emulator::{ClusterModel, EmuEnvState, EmulatorEnv};
pub use env::{EnvStep, Environment, SyntheticEnv, SyntheticEnvConfig};
pub use error::{Error, Result};
pub use kmeans::KMeansConfig;
pub use model::{Action, Bounds, MiObservation, StateFeature, StateWindow, TransferParams};
pub use net::{EnergyConfig, LinkConfig};
pub use rewards::{RewardConfig, RewardKind};
pub use translog::{TransitionDataset, TransitionRecord};
