//! Transfer parameters, the coupled five-way action set, monitoring-interval
//! observations and the windowed state the agents see.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of monitoring intervals stacked into one state.
pub const DEFAULT_HISTORY: usize = 5;

/// Number of scalar features per monitoring interval.
pub const FEATURE_DIM: usize = 5;

/// Limits on concurrency and parallelism, plus a cap on the stream product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    pub cc_min: u32,
    pub cc_max: u32,
    pub p_min: u32,
    pub p_max: u32,
    pub n_streams_cap: u32,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            cc_min: 1,
            cc_max: 16,
            p_min: 1,
            p_max: 16,
            n_streams_cap: 256,
        }
    }
}

impl Bounds {
    pub fn new(cc_min: u32, cc_max: u32, p_min: u32, p_max: u32, n_streams_cap: u32) -> Result<Self> {
        let b = Self {
            cc_min,
            cc_max,
            p_min,
            p_max,
            n_streams_cap,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cc_min < 1 || self.p_min < 1 {
            return Err(Error::invalid("cc_min and p_min must be at least 1"));
        }
        if self.cc_min > self.cc_max || self.p_min > self.p_max {
            return Err(Error::invalid("bounds minimum exceeds maximum"));
        }
        if self.n_streams_cap < self.cc_min * self.p_min {
            return Err(Error::invalid("n_streams_cap below cc_min * p_min"));
        }
        Ok(())
    }

    pub fn contains(&self, params: TransferParams) -> bool {
        (self.cc_min..=self.cc_max).contains(&params.cc)
            && (self.p_min..=self.p_max).contains(&params.p)
            && params.streams() <= self.n_streams_cap
    }
}

/// Concurrency (simultaneous file tasks) and parallelism (streams per task).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransferParams {
    pub cc: u32,
    pub p: u32,
}

impl TransferParams {
    pub const fn new(cc: u32, p: u32) -> Self {
        Self { cc, p }
    }

    /// Total TCP streams, `cc * p`.
    pub fn streams(self) -> u32 {
        self.cc * self.p
    }
}

/// The five coupled adjustments of `(cc, p)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Hold,
    Inc1,
    Dec1,
    Inc2,
    Dec2,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; 5] = [Action::Hold, Action::Inc1, Action::Dec1, Action::Inc2, Action::Dec2];

    pub fn index(self) -> usize {
        match self {
            Action::Hold => 0,
            Action::Inc1 => 1,
            Action::Dec1 => 2,
            Action::Inc2 => 3,
            Action::Dec2 => 4,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Change applied to both `cc` and `p`.
    pub fn delta(self) -> i32 {
        match self {
            Action::Hold => 0,
            Action::Inc1 => 1,
            Action::Dec1 => -1,
            Action::Inc2 => 2,
            Action::Dec2 => -2,
        }
    }

    /// Inverse of [`Action::delta`] for coupled changes; `None` for anything
    /// that is not one of the five adjustments.
    pub fn from_delta(dcc: i64, dp: i64) -> Option<Self> {
        if dcc != dp {
            return None;
        }
        Self::ALL.into_iter().find(|a| i64::from(a.delta()) == dcc)
    }

    /// One-hot encoding in index order.
    pub fn one_hot(self) -> [f64; Action::COUNT] {
        let mut v = [0.0; Action::COUNT];
        v[self.index()] = 1.0;
        v
    }
}

/// Applies `action` to `params`, clamping each axis into its range and then
/// shrinking both axes together until the stream cap holds.
pub fn apply_action(params: TransferParams, action: Action, bounds: &Bounds) -> TransferParams {
    let d = i64::from(action.delta());
    let clamp = |v: u32, lo: u32, hi: u32| (i64::from(v) + d).clamp(i64::from(lo), i64::from(hi)) as u32;
    let mut cc = clamp(params.cc, bounds.cc_min, bounds.cc_max);
    let mut p = clamp(params.p, bounds.p_min, bounds.p_max);
    while cc * p > bounds.n_streams_cap {
        // cap >= cc_min * p_min, so at least one axis can still shrink
        if cc > bounds.cc_min {
            cc -= 1;
        }
        if p > bounds.p_min {
            p -= 1;
        }
    }
    TransferParams { cc, p }
}

/// Everything measured during one monitoring interval (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiObservation {
    /// Seconds since the epoch.
    pub timestamp: f64,
    /// Bits per second.
    pub throughput: f64,
    /// Packet loss rate, fraction in `[0, 1]`.
    pub plr: f64,
    /// Seconds.
    pub mean_rtt: f64,
    /// Joules consumed during the interval.
    pub energy: f64,
    pub cc: u32,
    pub p: u32,
    /// Reward metric recorded for the interval.
    pub score: f64,
}

impl MiObservation {
    pub fn params(&self) -> TransferParams {
        TransferParams::new(self.cc, self.p)
    }

    pub fn throughput_gbps(&self) -> f64 {
        self.throughput / 1e9
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.throughput >= 0.0) {
            return Err(Error::invalid("throughput must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.plr) {
            return Err(Error::invalid("plr must lie in [0, 1]"));
        }
        if !(self.mean_rtt > 0.0) {
            return Err(Error::invalid("mean_rtt must be positive"));
        }
        if !(self.energy >= 0.0) {
            return Err(Error::invalid("energy must be non-negative"));
        }
        Ok(())
    }
}

/// Per-interval signal vector `{plr, rtt_gradient, rtt_ratio, cc, p}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateFeature {
    pub plr: f64,
    pub rtt_gradient: f64,
    pub rtt_ratio: f64,
    pub cc: u32,
    pub p: u32,
}

impl StateFeature {
    pub fn params(&self) -> TransferParams {
        TransferParams::new(self.cc, self.p)
    }

    pub fn as_array(&self) -> [f64; FEATURE_DIM] {
        [
            self.plr,
            self.rtt_gradient,
            self.rtt_ratio,
            f64::from(self.cc),
            f64::from(self.p),
        ]
    }

    /// Network input encoding: loss on a log scale, RTT signals centred and
    /// scaled to O(1), parameters divided by their upper bounds.
    pub fn encode(&self, bounds: &Bounds) -> [f64; FEATURE_DIM] {
        let plr = ((self.plr.max(1e-7)).log10() + 7.0) / 5.0;
        [
            plr,
            (self.rtt_gradient * 5.0).clamp(-5.0, 5.0),
            ((self.rtt_ratio - 1.0) * 2.0).clamp(0.0, 10.0),
            f64::from(self.cc) / f64::from(bounds.cc_max),
            f64::from(self.p) / f64::from(bounds.p_max),
        ]
    }
}

/// The last `n` feature vectors, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateWindow {
    features: VecDeque<StateFeature>,
}

impl StateWindow {
    /// A window of length `n` filled with copies of `feature`.
    pub fn filled(feature: StateFeature, n: usize) -> Self {
        assert!(n >= 1, "history length must be at least 1");
        Self {
            features: std::iter::repeat_n(feature, n).collect(),
        }
    }

    pub fn from_features(features: Vec<StateFeature>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Empty("state window"));
        }
        Ok(Self {
            features: features.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Drops the oldest feature and appends `feature`.
    pub fn push(&mut self, feature: StateFeature) {
        self.features.pop_front();
        self.features.push_back(feature);
    }

    pub fn latest(&self) -> &StateFeature {
        self.features.back().expect("window is never empty")
    }

    pub fn iter(&self) -> impl Iterator<Item = &StateFeature> {
        self.features.iter()
    }

    /// Flattened network input of length `n * FEATURE_DIM`.
    pub fn to_input(&self, bounds: &Bounds) -> Vec<f64> {
        self.features.iter().flat_map(|f| f.encode(bounds)).collect()
    }
}

/// Feature of `obs` given the previous interval's RTT (if any).
pub fn feature_of(obs: &MiObservation, prev_rtt: Option<f64>, session_min_rtt: f64) -> StateFeature {
    let rtt_gradient = match prev_rtt {
        Some(prev) if prev > 0.0 => (obs.mean_rtt - prev) / prev,
        _ => 0.0,
    };
    StateFeature {
        plr: obs.plr,
        rtt_gradient,
        rtt_ratio: obs.mean_rtt / session_min_rtt,
        cc: obs.cc,
        p: obs.p,
    }
}

/// Running per-session RTT bookkeeping: previous RTT for the gradient and the
/// session minimum for the ratio.
#[derive(Debug, Clone, Default)]
pub struct FeatureTracker {
    prev_rtt: Option<f64>,
    min_rtt: Option<f64>,
}

impl FeatureTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn session_min_rtt(&self) -> Option<f64> {
        self.min_rtt
    }

    /// Feature of `obs`, updating the running minimum first so the ratio is
    /// never below one.
    pub fn observe(&mut self, obs: &MiObservation) -> StateFeature {
        let min = self.min_rtt.map_or(obs.mean_rtt, |m| m.min(obs.mean_rtt));
        self.min_rtt = Some(min);
        let f = feature_of(obs, self.prev_rtt, min);
        self.prev_rtt = Some(obs.mean_rtt);
        f
    }
}

/// Builds the `n`-long state window ending at the last observation of
/// `history`, padding short histories with the earliest feature.
pub fn featurize(history: &[MiObservation], session_min_rtt: f64, n: usize) -> Result<StateWindow> {
    if history.is_empty() {
        return Err(Error::Empty("observation history"));
    }
    if n == 0 {
        return Err(Error::invalid("history length n must be at least 1"));
    }
    if !(session_min_rtt > 0.0) {
        return Err(Error::invalid("session_min_rtt must be positive"));
    }
    let start = history.len().saturating_sub(n);
    let mut feats: Vec<StateFeature> = (start..history.len())
        .map(|i| {
            let prev = i.checked_sub(1).map(|j| history[j].mean_rtt);
            feature_of(&history[i], prev, session_min_rtt)
        })
        .collect();
    if feats.len() < n {
        let pad = vec![feats[0]; n - feats.len()];
        feats.splice(0..0, pad);
    }
    StateWindow::from_features(feats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(rtt: f64) -> MiObservation {
        MiObservation {
            timestamp: 0.0,
            throughput: 1e9,
            plr: 0.0,
            mean_rtt: rtt,
            energy: 10.0,
            cc: 4,
            p: 4,
            score: 0.0,
        }
    }

    #[test]
    fn apply_action_examples() {
        let b = Bounds::default();
        assert_eq!(apply_action(TransferParams::new(7, 7), Action::Inc1, &b), TransferParams::new(8, 8));
        assert_eq!(apply_action(TransferParams::new(4, 4), Action::Hold, &b), TransferParams::new(4, 4));
        assert_eq!(apply_action(TransferParams::new(1, 1), Action::Dec2, &b), TransferParams::new(1, 1));
        let small = Bounds::new(1, 8, 1, 8, 64).unwrap();
        assert_eq!(apply_action(TransferParams::new(7, 7), Action::Inc2, &small), TransferParams::new(8, 8));
    }

    #[test]
    fn stream_cap_repair_shrinks_both_axes() {
        let b = Bounds::new(1, 16, 1, 16, 50).unwrap();
        assert_eq!(apply_action(TransferParams::new(7, 7), Action::Inc1, &b), TransferParams::new(7, 7));
        let b = Bounds::new(1, 16, 4, 16, 40).unwrap();
        // (11,6) -> (10,5) -> (9,4)
        let out = apply_action(TransferParams::new(9, 4), Action::Inc2, &b);
        assert_eq!(out, TransferParams::new(9, 4));
        // p pinned at its minimum, only cc shrinks
        let out = apply_action(TransferParams::new(12, 4), Action::Hold, &b);
        assert_eq!(out, TransferParams::new(10, 4));
    }

    #[test]
    fn bounds_validation() {
        assert!(Bounds::new(0, 4, 1, 4, 16).is_err());
        assert!(Bounds::new(5, 4, 1, 4, 16).is_err());
        assert!(Bounds::new(2, 4, 2, 4, 3).is_err());
    }

    #[test]
    fn action_delta_roundtrip() {
        for a in Action::ALL {
            assert_eq!(Action::from_delta(a.delta().into(), a.delta().into()), Some(a));
            assert_eq!(Action::from_index(a.index()), Some(a));
        }
        assert_eq!(Action::from_delta(3, 3), None);
        assert_eq!(Action::from_delta(1, 0), None);
    }

    #[test]
    fn featurize_constant_rtt_has_zero_gradient() {
        let h: Vec<_> = (0..8).map(|_| obs(0.03)).collect();
        let w = featurize(&h, 0.03, 5).unwrap();
        assert_eq!(w.len(), 5);
        assert!(w.iter().all(|f| f.rtt_gradient == 0.0));
        assert!(w.iter().all(|f| f.rtt_ratio == 1.0));
    }

    #[test]
    fn featurize_relative_gradient() {
        let w = featurize(&[obs(0.030), obs(0.033)], 0.030, 5).unwrap();
        assert!((w.latest().rtt_gradient - 0.1).abs() < 1e-12);
        assert!((w.latest().rtt_ratio - 1.1).abs() < 1e-12);
        // padded with the earliest feature
        let first = w.iter().next().unwrap();
        assert_eq!(first.rtt_gradient, 0.0);
        assert_eq!(w.iter().filter(|f| f.rtt_gradient == 0.0).count(), 4);
    }

    #[test]
    fn featurize_rejects_empty_history() {
        assert!(matches!(featurize(&[], 0.03, 5), Err(Error::Empty(_))));
    }

    #[test]
    fn window_push_keeps_length() {
        let f = feature_of(&obs(0.03), None, 0.03);
        let mut w = StateWindow::filled(f, 3);
        let mut g = f;
        g.cc = 9;
        w.push(g);
        assert_eq!(w.len(), 3);
        assert_eq!(w.latest().cc, 9);
        assert_eq!(w.to_input(&Bounds::default()).len(), 3 * FEATURE_DIM);
    }
}
