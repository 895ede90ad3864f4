//! Discrete-time model of a shared bottleneck link.
//!
//! Each monitoring interval the offered load `N_tot * s + bg` is compared to
//! the capacity. Below capacity every stream runs at its saturation rate;
//! above it, loss grows quadratically in the relative overload and the RTT
//! inflates linearly, so the loss-based (Mathis) per-stream rate collapses.
//! A flow receives the minimum of its Mathis aggregate, its saturation rate
//! and its stream-proportional share of the link, where background traffic
//! counts as `bg / s` phantom streams.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MiObservation, TransferParams};

/// Relative slack allowed on the capacity conservation check.
pub const CAPACITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    /// Bottleneck bandwidth, bits/s.
    pub capacity_b: f64,
    /// Uncongested round-trip time, seconds.
    pub base_rtt: f64,
    /// Maximum segment size, bytes.
    pub mss: f64,
    pub mathis_c: f64,
    /// Residual loss when uncongested.
    pub loss_floor: f64,
    /// Gain of the quadratic congestion-loss term.
    pub loss_kappa: f64,
    /// RTT inflation per unit of relative overload.
    pub rtt_q: f64,
    /// Per-stream saturation rate, bits/s.
    pub per_stream_rate: f64,
    /// Background traffic levels, bits/s, sampled uniformly.
    pub bg_levels: Vec<f64>,
    /// Seconds a sampled background level is held.
    pub bg_hold: f64,
    /// Monitoring interval length, seconds.
    pub mi_duration: f64,
    /// Multiplicative measurement jitter; throughput is scaled by `1 - u*jitter`
    /// and RTT by `1 + u*jitter` with `u ~ U[0,1)`. Zero disables it.
    pub jitter: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            capacity_b: 10e9,
            base_rtt: 0.0346,
            mss: 9000.0,
            mathis_c: 1.0,
            loss_floor: 1e-6,
            loss_kappa: 0.0024,
            rtt_q: 0.5,
            per_stream_rate: 250e6,
            bg_levels: vec![0.0, 2.5e9, 5e9, 7.5e9],
            bg_hold: 30.0,
            mi_duration: 1.0,
            jitter: 0.0,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| Error::Config {
            key: format!("link.{key}"),
            reason: reason.to_string(),
        };
        if !(self.capacity_b > 0.0) {
            return Err(bad("capacity_b", "must be positive"));
        }
        if !(self.base_rtt > 0.0) {
            return Err(bad("base_rtt", "must be positive"));
        }
        if !(self.mss > 0.0) {
            return Err(bad("mss", "must be positive"));
        }
        if !(self.mathis_c > 0.0) {
            return Err(bad("mathis_c", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.loss_floor) || self.loss_floor == 0.0 {
            return Err(bad("loss_floor", "must lie in (0, 1)"));
        }
        if !(self.loss_kappa >= 0.0) {
            return Err(bad("loss_kappa", "must be non-negative"));
        }
        if !(self.rtt_q >= 0.0) {
            return Err(bad("rtt_q", "must be non-negative"));
        }
        if !(self.per_stream_rate > 0.0) {
            return Err(bad("per_stream_rate", "must be positive"));
        }
        if self.bg_levels.is_empty() {
            return Err(bad("bg_levels", "must not be empty"));
        }
        if self.bg_levels.iter().any(|&l| !(0.0..=self.capacity_b).contains(&l)) {
            return Err(bad("bg_levels", "levels must lie in [0, capacity_b]"));
        }
        if !(self.bg_hold > 0.0) {
            return Err(bad("bg_hold", "must be positive"));
        }
        if !(self.mi_duration > 0.0) {
            return Err(bad("mi_duration", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(bad("jitter", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Number of monitoring intervals a background level is held (at least 1).
    pub fn bg_hold_mis(&self) -> u64 {
        ((self.bg_hold / self.mi_duration).round() as u64).max(1)
    }
}

/// Linear end-host energy model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    /// J per stream-second.
    pub joule_per_stream_s: f64,
    /// J per Gbit delivered.
    pub joule_per_gbit: f64,
    /// J per Gbit lost to retransmission.
    pub retx_penalty: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            joule_per_stream_s: 0.8,
            joule_per_gbit: 4.9,
            retx_penalty: 50.0,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("joule_per_stream_s", self.joule_per_stream_s),
            ("joule_per_gbit", self.joule_per_gbit),
            ("retx_penalty", self.retx_penalty),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config {
                    key: format!("energy.{key}"),
                    reason: "must be non-negative".into(),
                });
            }
        }
        Ok(())
    }
}

/// One transfer sharing the link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub params: TransferParams,
    pub cumulative_bits: f64,
    pub cumulative_energy: f64,
}

impl FlowState {
    pub fn new(params: TransferParams) -> Self {
        Self {
            params,
            cumulative_bits: 0.0,
            cumulative_energy: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkTickResult {
    /// One observation per input flow, in input order.
    pub observations: Vec<MiObservation>,
    /// Background traffic actually carried, bits/s.
    pub bg_used: f64,
    /// Offered load `N_tot * s + bg`, bits/s.
    pub aggregate_offered: f64,
}

impl LinkTickResult {
    pub fn total_throughput(&self) -> f64 {
        self.observations.iter().map(|o| o.throughput).sum()
    }
}

/// Loss-based single-stream throughput bound `(mss*8/rtt) * c/sqrt(loss)`, bits/s.
pub fn mathis_throughput(mss: f64, rtt: f64, loss: f64, c: f64) -> Result<f64> {
    if !(loss > 0.0) {
        return Err(Error::invalid(format!("loss must be positive, got {loss}")));
    }
    if !(rtt > 0.0) {
        return Err(Error::invalid(format!("rtt must be positive, got {rtt}")));
    }
    Ok((mss * 8.0 / rtt) * (c / loss.sqrt()))
}

/// Path parameters seen by one TCP stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamPath {
    pub mss: f64,
    pub rtt: f64,
    pub loss: f64,
}

/// Sum of per-stream Mathis bounds.
pub fn aggregate_throughput(streams: &[StreamPath], c: f64) -> Result<f64> {
    if streams.is_empty() {
        return Err(Error::Empty("stream list"));
    }
    streams
        .iter()
        .map(|s| mathis_throughput(s.mss, s.rtt, s.loss, c))
        .sum()
}

/// Uniformly samples one background level.
pub fn bg_sample<R: Rng + ?Sized>(rng: &mut R, cfg: &LinkConfig) -> f64 {
    match cfg.bg_levels.len() {
        0 => 0.0,
        1 => cfg.bg_levels[0],
        n => cfg.bg_levels[rng.random_range(0..n)],
    }
}

/// Energy drawn by the end hosts over one interval of `dt` seconds, joules.
pub fn energy_per_mi(n_streams: u32, throughput: f64, loss: f64, dt: f64, ecfg: &EnergyConfig) -> f64 {
    let gbit = throughput / 1e9;
    (ecfg.joule_per_stream_s * f64::from(n_streams) + ecfg.joule_per_gbit * gbit + ecfg.retx_penalty * gbit * loss) * dt
}

/// Loss and RTT on the link for a given offered load.
pub fn congestion_state(cfg: &LinkConfig, offered: f64) -> (f64, f64) {
    let b = cfg.capacity_b;
    if offered <= b {
        (cfg.loss_floor, cfg.base_rtt)
    } else {
        let over = (offered - b) / b;
        let loss = (cfg.loss_floor + cfg.loss_kappa * over * over).min(1.0);
        let rtt = cfg.base_rtt * (1.0 + cfg.rtt_q * (offered / b - 1.0));
        (loss, rtt)
    }
}

/// Advances every flow on the link by one monitoring interval ending at `now`.
///
/// Observations carry `score = 0`; the caller records its reward metric.
pub fn link_tick<R: Rng + ?Sized>(
    cfg: &LinkConfig,
    ecfg: &EnergyConfig,
    flows: &mut [FlowState],
    bg: f64,
    now: f64,
    rng: &mut R,
) -> Result<LinkTickResult> {
    if flows.is_empty() {
        return Err(Error::Empty("flow list"));
    }
    let b = cfg.capacity_b;
    if !(0.0..=b).contains(&bg) {
        return Err(Error::invalid(format!("background {bg} outside [0, {b}]")));
    }
    let s = cfg.per_stream_rate;
    let n_tot: f64 = flows.iter().map(|f| f64::from(f.params.streams())).sum();
    let offered = n_tot * s + bg;
    let (loss, rtt) = congestion_state(cfg, offered);
    let per_stream_mathis = mathis_throughput(cfg.mss, rtt, loss, cfg.mathis_c)?;
    let bg_equiv = bg / s;
    let share_unit = b / (n_tot + bg_equiv);

    let dt = cfg.mi_duration;
    let mut observations = Vec::with_capacity(flows.len());
    for flow in flows.iter_mut() {
        let streams = flow.params.streams();
        let n = f64::from(streams);
        // N identical streams: the Mathis aggregate is N times one stream.
        let mut throughput = (n * per_stream_mathis).min(n * s).min(n * share_unit);
        let mut mean_rtt = rtt;
        if cfg.jitter > 0.0 {
            throughput *= 1.0 - cfg.jitter * rng.random::<f64>();
            mean_rtt *= 1.0 + cfg.jitter * rng.random::<f64>();
        }
        let energy = energy_per_mi(streams, throughput, loss, dt, ecfg);
        flow.cumulative_bits += throughput * dt;
        flow.cumulative_energy += energy;
        observations.push(MiObservation {
            timestamp: now,
            throughput,
            plr: loss,
            mean_rtt,
            energy,
            cc: flow.params.cc,
            p: flow.params.p,
            score: 0.0,
        });
    }
    let bg_used = bg.min(bg_equiv * share_unit);
    let carried = observations.iter().map(|o| o.throughput).sum::<f64>() + bg_used;
    if carried > b * (1.0 + CAPACITY_TOLERANCE) {
        return Err(Error::CapacityExceeded { carried, capacity: b });
    }
    Ok(LinkTickResult {
        observations,
        bg_used,
        aggregate_offered: offered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn mathis_examples() {
        let t = mathis_throughput(1500.0, 0.05, 0.01, 1.0).unwrap();
        assert!(rel(t, 2.4e6) < 1e-12, "{t}");
        let t2 = mathis_throughput(1500.0, 0.10, 0.01, 1.0).unwrap();
        assert!(rel(t2, t / 2.0) < 1e-12);
        let t4 = mathis_throughput(1500.0, 0.05, 0.04, 1.0).unwrap();
        assert!(rel(t4, t / 2.0) < 1e-12);
        assert!(mathis_throughput(1500.0, 0.05, 0.0, 1.0).is_err());
        assert!(mathis_throughput(1500.0, 0.0, 0.01, 1.0).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let one = StreamPath {
            mss: 1500.0,
            rtt: 0.05,
            loss: 0.01,
        };
        let single = aggregate_throughput(&[one], 1.0).unwrap();
        assert!(rel(aggregate_throughput(&[one; 4], 1.0).unwrap(), 4.0 * single) < 1e-12);
        let lossy = StreamPath { loss: 0.04, ..one };
        assert!(rel(aggregate_throughput(&[one, lossy], 1.0).unwrap(), 1.5 * single) < 1e-12);
        assert!(matches!(aggregate_throughput(&[], 1.0), Err(Error::Empty(_))));
    }

    #[test]
    fn bg_sample_single_level_and_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = LinkConfig {
            bg_levels: vec![0.0],
            ..LinkConfig::default()
        };
        assert!((0..100).all(|_| bg_sample(&mut rng, &cfg) == 0.0));
        let cfg = LinkConfig {
            bg_levels: vec![0.0, 5e9],
            ..LinkConfig::default()
        };
        let hi = (0..10_000).filter(|_| bg_sample(&mut rng, &cfg) > 0.0).count();
        let f = hi as f64 / 10_000.0;
        assert!((f - 0.5).abs() <= 0.05, "{f}");
    }

    #[test]
    fn bg_sample_is_seed_deterministic() {
        let cfg = LinkConfig::default();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| bg_sample(&mut rng, &cfg)).collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
    }

    #[test]
    fn energy_examples() {
        let e = EnergyConfig::default();
        assert_eq!(energy_per_mi(0, 0.0, 0.0, 1.0, &e), 0.0);
        let j = energy_per_mi(49, 8.32e9, 0.0, 1.0, &e);
        assert!((j - 79.968).abs() < 1e-9, "{j}");
        assert!((j - 80.0).abs() < 0.05);
        assert!(energy_per_mi(50, 8.32e9, 0.0, 1.0, &e) > j);
    }

    #[test]
    fn uncongested_branch_uses_floor_and_base_rtt() {
        let cfg = LinkConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut flows = vec![FlowState::new(TransferParams::new(4, 4))];
        let r = link_tick(&cfg, &EnergyConfig::default(), &mut flows, 2e9, 1.0, &mut rng).unwrap();
        let o = r.observations[0];
        assert_eq!(o.plr, cfg.loss_floor);
        assert_eq!(o.mean_rtt, cfg.base_rtt);
        assert!(rel(o.throughput, 16.0 * cfg.per_stream_rate) < 1e-12);
        assert_eq!(r.bg_used, 2e9);
    }

    #[test]
    fn double_overload_gives_floor_plus_kappa() {
        let cfg = LinkConfig {
            bg_levels: vec![0.0],
            ..LinkConfig::default()
        };
        // 80 streams * 250 Mb/s = 20 Gb/s = 2b
        let (loss, rtt) = congestion_state(&cfg, 2.0 * cfg.capacity_b);
        assert!(rel(loss, cfg.loss_floor + cfg.loss_kappa) < 1e-12);
        assert!(rel(rtt, cfg.base_rtt * 1.5) < 1e-12);
    }

    #[test]
    fn identical_flows_get_identical_throughput() {
        let cfg = LinkConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut flows = vec![FlowState::new(TransferParams::new(5, 5)); 2];
        let r = link_tick(&cfg, &EnergyConfig::default(), &mut flows, 5e9, 1.0, &mut rng).unwrap();
        assert_eq!(r.observations[0].throughput, r.observations[1].throughput);
        assert!(r.total_throughput() + r.bg_used <= cfg.capacity_b * (1.0 + CAPACITY_TOLERANCE));
    }

    #[test]
    fn seven_by_seven_calibration() {
        let cfg = LinkConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut flows = vec![FlowState::new(TransferParams::new(7, 7))];
        let r = link_tick(&cfg, &EnergyConfig::default(), &mut flows, 0.0, 1.0, &mut rng).unwrap();
        let gbps = r.observations[0].throughput / 1e9;
        assert!((8.0..8.6).contains(&gbps), "{gbps}");
    }

    #[test]
    fn cumulative_counters_grow() {
        let cfg = LinkConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut flows = vec![FlowState::new(TransferParams::new(2, 2))];
        link_tick(&cfg, &EnergyConfig::default(), &mut flows, 0.0, 1.0, &mut rng).unwrap();
        let (b1, e1) = (flows[0].cumulative_bits, flows[0].cumulative_energy);
        link_tick(&cfg, &EnergyConfig::default(), &mut flows, 0.0, 2.0, &mut rng).unwrap();
        assert!(flows[0].cumulative_bits > b1 && flows[0].cumulative_energy > e1);
    }

    #[test]
    fn link_tick_rejects_bad_inputs() {
        let cfg = LinkConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(link_tick(&cfg, &EnergyConfig::default(), &mut [], 0.0, 0.0, &mut rng).is_err());
        let mut flows = vec![FlowState::new(TransferParams::new(1, 1))];
        assert!(link_tick(&cfg, &EnergyConfig::default(), &mut flows, 2.0 * cfg.capacity_b, 0.0, &mut rng).is_err());
    }

    #[test]
    fn default_config_validates() {
        LinkConfig::default().validate().unwrap();
        EnergyConfig::default().validate().unwrap();
        let bad = LinkConfig {
            bg_levels: vec![20e9],
            ..LinkConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "link.bg_levels"));
    }
}
