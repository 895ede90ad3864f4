//! Offline environment that answers `(state, action)` queries by sampling
//! logged transitions from the nearest k-means cluster.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvStep, Environment};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans_fit, nearest, KMeansConfig};
use crate::model::{apply_action, Action, Bounds, MiObservation, StateFeature, StateWindow, TransferParams};
use crate::translog::{FeatureScaling, TransitionDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Record indices per cluster.
    pub members: Vec<Vec<usize>>,
    pub dataset_ref: String,
    pub feature_scaling: FeatureScaling,
    pub sse: f64,
}

/// Joint clustering key: min/max-normalized feature followed by the
/// one-hot action.
pub fn cluster_key(scaling: &FeatureScaling, feature: &StateFeature, action: Action) -> Vec<f64> {
    let mut key = scaling.normalize(feature).to_vec();
    key.extend_from_slice(&action.one_hot());
    key
}

impl ClusterModel {
    pub fn fit(dataset: &TransitionDataset, cfg: &KMeansConfig, seed: u64) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Empty("transition dataset"));
        }
        let keys: Vec<Vec<f64>> = dataset
            .records
            .iter()
            .map(|r| cluster_key(&dataset.feature_scaling, &r.state, r.action))
            .collect();
        let fit = kmeans_fit(&keys, cfg, seed)?;
        let mut members = vec![Vec::new(); cfg.k];
        for (i, &a) in fit.assignments.iter().enumerate() {
            members[a].push(i);
        }
        Ok(Self {
            k: cfg.k,
            centroids: fit.centroids,
            members,
            dataset_ref: dataset.id.clone(),
            feature_scaling: dataset.feature_scaling.clone(),
            sse: fit.sse,
        })
    }

    /// Checks that the model was fitted on `dataset` and is internally
    /// consistent.
    pub fn check_against(&self, dataset: &TransitionDataset) -> Result<()> {
        if self.dataset_ref != dataset.id {
            return Err(Error::invalid(format!(
                "cluster model built from dataset {} but {} supplied",
                self.dataset_ref, dataset.id
            )));
        }
        if self.centroids.len() != self.k || self.members.len() != self.k {
            return Err(Error::invalid("cluster count does not match k"));
        }
        let mut seen = vec![false; dataset.len()];
        for m in &self.members {
            if m.is_empty() {
                return Err(Error::invalid("empty cluster"));
            }
            for &i in m {
                if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::invalid(format!("record {i} missing or assigned twice")));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("record not assigned to any cluster"));
        }
        Ok(())
    }

    pub fn nearest_cluster(&self, feature: &StateFeature, action: Action) -> usize {
        nearest(&self.centroids, &cluster_key(&self.feature_scaling, feature, action)).0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmuEnvState {
    pub window: StateWindow,
    pub params: TransferParams,
    /// Lowest RTT among observations replayed so far.
    pub session_min_rtt: Option<f64>,
    pub step: u64,
    pub horizon: u64,
}

impl EmuEnvState {
    pub fn done(&self) -> bool {
        self.step >= self.horizon
    }
}

/// Starts an episode from a uniformly chosen logged state.
pub fn emu_reset<R: Rng + ?Sized>(
    dataset: &TransitionDataset,
    history: usize,
    horizon: u64,
    rng: &mut R,
) -> Result<EmuEnvState> {
    if dataset.is_empty() {
        return Err(Error::Empty("transition dataset"));
    }
    let rec = &dataset.records[rng.random_range(0..dataset.len())];
    Ok(EmuEnvState {
        window: StateWindow::filled(rec.state, history),
        params: rec.state.params(),
        session_min_rtt: None,
        step: 0,
        horizon,
    })
}

/// Answers `action` from a member of the nearest cluster. The returned
/// observation is the logged one, verbatim; the pushed feature takes its
/// link signals from the logged next state and its parameters from
/// `apply_action`.
pub fn emu_step<R: Rng + ?Sized>(
    model: &ClusterModel,
    dataset: &TransitionDataset,
    state: &EmuEnvState,
    action: Action,
    rng: &mut R,
) -> (EmuEnvState, MiObservation) {
    let cluster = &model.members[model.nearest_cluster(state.window.latest(), action)];
    let rec = &dataset.records[cluster[rng.random_range(0..cluster.len())]];
    let params = apply_action(state.params, action, &dataset.bounds);
    let mut window = state.window.clone();
    window.push(StateFeature {
        cc: params.cc,
        p: params.p,
        ..rec.next_state
    });
    let min_rtt = state
        .session_min_rtt
        .map_or(rec.next_obs.mean_rtt, |m| m.min(rec.next_obs.mean_rtt));
    let next = EmuEnvState {
        window,
        params,
        session_min_rtt: Some(min_rtt),
        step: state.step + 1,
        horizon: state.horizon,
    };
    (next, rec.next_obs)
}

/// [`Environment`] adapter over a dataset and its cluster model.
#[derive(Debug, Clone)]
pub struct EmulatorEnv {
    dataset: Arc<TransitionDataset>,
    model: Arc<ClusterModel>,
    history: usize,
    horizon: u64,
    rng: ChaCha8Rng,
    state: Option<EmuEnvState>,
}

impl EmulatorEnv {
    pub fn new(
        dataset: Arc<TransitionDataset>,
        model: Arc<ClusterModel>,
        history: usize,
        horizon: u64,
        seed: u64,
    ) -> Result<Self> {
        model.check_against(&dataset)?;
        if history == 0 || horizon == 0 {
            return Err(Error::invalid("history and horizon must be at least 1"));
        }
        Ok(Self {
            dataset,
            model,
            history,
            horizon,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: None,
        })
    }

    pub fn state(&self) -> Option<&EmuEnvState> {
        self.state.as_ref()
    }

    pub fn dataset(&self) -> &TransitionDataset {
        &self.dataset
    }
}

impl Environment for EmulatorEnv {
    fn bounds(&self) -> Bounds {
        self.dataset.bounds
    }

    fn params(&self) -> TransferParams {
        self.state.as_ref().map_or(TransferParams::new(0, 0), |s| s.params)
    }

    fn reset(&mut self) -> EnvStep {
        let st = emu_reset(&self.dataset, self.history, self.horizon, &mut self.rng)
            .expect("dataset checked non-empty at construction");
        let feature = *st.window.latest();
        self.state = Some(st);
        EnvStep {
            obs: None,
            feature,
            done: false,
        }
    }

    fn step(&mut self, action: Action) -> Result<EnvStep> {
        let Some(st) = self.state.as_ref() else {
            return Err(Error::invalid("step before reset"));
        };
        let (next, obs) = emu_step(&self.model, &self.dataset, st, action, &mut self.rng);
        let step = EnvStep {
            obs: Some(obs),
            feature: *next.window.latest(),
            done: next.done(),
        };
        self.state = Some(next);
        Ok(step)
    }
}
