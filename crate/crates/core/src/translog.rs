//! Per-interval transfer logs and the transition datasets built from them.
//!
//! A log entry looks like
//!
//! ```text
//! 1707718539.468927 -- INFO: Throughput:8.32Gbps lossRate:0 parallelism:7 concurrency:7 score:3.0 rtt:34.6ms energy:80.0J
//! ```
//!
//! Fields may be separated by any whitespace, including newlines.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{apply_action, feature_of, Action, Bounds, MiObservation, StateFeature, FEATURE_DIM};
use crate::rewards::{utility, RewardConfig};

const FIELDS: [&str; 7] = [
    "Throughput",
    "lossRate",
    "parallelism",
    "concurrency",
    "score",
    "rtt",
    "energy",
];

fn field_name(key: &str) -> &'static str {
    match key {
        "Throughput" => "throughput",
        "lossRate" => "lossRate",
        "parallelism" => "parallelism",
        "concurrency" => "concurrency",
        "score" => "score",
        "rtt" => "rtt",
        _ => "energy",
    }
}

fn parse_f64(field: &'static str, raw: &str) -> Result<f64> {
    let v: f64 = raw.parse().map_err(|_| Error::Parse {
        field,
        reason: format!("`{raw}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            field,
            reason: format!("`{raw}` is not finite"),
        });
    }
    Ok(v)
}

fn strip_unit<'a>(field: &'static str, raw: &'a str, unit: &str) -> Result<&'a str> {
    raw.strip_suffix(unit).ok_or_else(|| Error::Parse {
        field,
        reason: format!("`{raw}` lacks unit `{unit}`"),
    })
}

/// Parses one log entry into SI units.
pub fn parse_line(text: &str) -> Result<MiObservation> {
    let mut tokens = text.split_whitespace();
    let ts_raw = tokens.next().ok_or_else(|| Error::Parse {
        field: "timestamp",
        reason: "empty entry".into(),
    })?;
    let timestamp = parse_f64("timestamp", ts_raw)?;
    if tokens.next() != Some("--") || tokens.next() != Some("INFO:") {
        return Err(Error::Parse {
            field: "header",
            reason: "expected `-- INFO:` after the timestamp".into(),
        });
    }

    let mut values: [Option<&str>; 7] = [None; 7];
    for tok in tokens {
        let (key, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
            field: "entry",
            reason: format!("token `{tok}` is not key:value"),
        })?;
        let idx = FIELDS.iter().position(|f| *f == key).ok_or_else(|| Error::Parse {
            field: "entry",
            reason: format!("unknown field `{key}`"),
        })?;
        if values[idx].replace(val).is_some() {
            return Err(Error::Parse {
                field: field_name(key),
                reason: "duplicate field".into(),
            });
        }
    }
    let get = |i: usize| -> Result<&str> {
        values[i].ok_or_else(|| Error::Parse {
            field: field_name(FIELDS[i]),
            reason: "missing field".into(),
        })
    };

    let throughput = parse_scaled("throughput", strip_unit("throughput", get(0)?, "Gbps")?, 9)?;
    let plr = parse_f64("lossRate", get(1)?)?;
    let p = get(2)?.parse::<u32>().map_err(|_| Error::Parse {
        field: "parallelism",
        reason: format!("`{}` is not a non-negative integer", values[2].unwrap_or_default()),
    })?;
    let cc = get(3)?.parse::<u32>().map_err(|_| Error::Parse {
        field: "concurrency",
        reason: format!("`{}` is not a non-negative integer", values[3].unwrap_or_default()),
    })?;
    let score = parse_f64("score", get(4)?)?;
    let mean_rtt = parse_scaled("rtt", strip_unit("rtt", get(5)?, "ms")?, -3)?;
    let energy = parse_f64("energy", strip_unit("energy", get(6)?, "J")?)?;

    if !(0.0..=1.0).contains(&plr) {
        return Err(Error::Parse {
            field: "lossRate",
            reason: "must lie in [0, 1]".into(),
        });
    }
    if throughput < 0.0 {
        return Err(Error::Parse {
            field: "throughput",
            reason: "must be non-negative".into(),
        });
    }
    if mean_rtt <= 0.0 {
        return Err(Error::Parse {
            field: "rtt",
            reason: "must be positive".into(),
        });
    }
    if energy < 0.0 {
        return Err(Error::Parse {
            field: "energy",
            reason: "must be non-negative".into(),
        });
    }
    Ok(MiObservation {
        timestamp,
        throughput,
        plr,
        mean_rtt,
        energy,
        cc,
        p,
        score,
    })
}

/// Moves the decimal point of a plain decimal string `pow10` places right.
/// Unit conversions done this way are exact, so a value survives a
/// serialize/parse cycle bit for bit.
fn shift_point(plain: &str, pow10: i32) -> String {
    let (sign, body) = match plain.strip_prefix('-') {
        Some(rest) => ("-", rest),
        None => ("", plain),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    let digits: String = [int, frac].concat();
    let point = int.len() as i64 + i64::from(pow10);
    let (int, frac) = if point <= 0 {
        ("0".to_string(), "0".repeat((-point) as usize) + &digits)
    } else if point as usize >= digits.len() {
        (digits.clone() + &"0".repeat(point as usize - digits.len()), String::new())
    } else {
        (digits[..point as usize].to_string(), digits[point as usize..].to_string())
    };
    let int = int.trim_start_matches('0');
    let frac = frac.trim_end_matches('0');
    format!(
        "{sign}{}.{}",
        if int.is_empty() { "0" } else { int },
        if frac.is_empty() { "0" } else { frac }
    )
}

/// Renders an SI value in log units `si * 10^pow10`; zero renders as `0`,
/// other integers keep a `.0`.
fn fmt_value(si: f64, pow10: i32) -> String {
    if si == 0.0 {
        return "0".to_string();
    }
    // `Display` gives the shortest round-trip digits without an exponent.
    shift_point(&si.to_string(), pow10)
}

/// Parses a number given in log units and returns `raw * 10^pow10` in SI,
/// rounding once.
fn parse_scaled(field: &'static str, raw: &str, pow10: i32) -> Result<f64> {
    if pow10 == 0 || raw.is_empty() {
        return parse_f64(field, raw);
    }
    let (mant, exp) = match raw.split_once(['e', 'E']) {
        Some((m, e)) => (
            m,
            e.parse::<i32>().map_err(|_| Error::Parse {
                field,
                reason: format!("`{raw}` is not a number"),
            })?,
        ),
        None => (raw, 0),
    };
    if mant.is_empty() || !mant.bytes().all(|b| b.is_ascii_digit() || b == b'.' || b == b'-' || b == b'+') {
        return Err(Error::Parse {
            field,
            reason: format!("`{raw}` is not a number"),
        });
    }
    parse_f64(field, &format!("{mant}e{}", exp + pow10)).map_err(|_| Error::Parse {
        field,
        reason: format!("`{raw}` is not a number"),
    })
}

/// Renders an observation in the log format on a single line.
pub fn serialize_line(obs: &MiObservation) -> String {
    let mut s = String::with_capacity(128);
    write!(
        s,
        "{} -- INFO: Throughput:{}Gbps lossRate:{} parallelism:{} concurrency:{} score:{} rtt:{}ms energy:{}J",
        fmt_value(obs.timestamp, 0),
        fmt_value(obs.throughput, -9),
        fmt_value(obs.plr, 0),
        obs.p,
        obs.cc,
        fmt_value(obs.score, 0),
        fmt_value(obs.mean_rtt, 3),
        fmt_value(obs.energy, 0),
    )
    .expect("writing to a String cannot fail");
    s
}

/// Parses every entry in a log text. An entry starts at a token followed by
/// `--`.
pub fn parse_log(text: &str) -> Result<Vec<MiObservation>> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let starts: Vec<usize> = (0..tokens.len())
        .filter(|&i| tokens.get(i + 1) == Some(&"--"))
        .collect();
    if starts.first().is_some_and(|&s| s != 0) {
        return Err(Error::Parse {
            field: "header",
            reason: format!("unexpected leading token `{}`", tokens[0]),
        });
    }
    starts
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let end = starts.get(k + 1).copied().unwrap_or(tokens.len());
            parse_line(&tokens[s..end].join(" "))
        })
        .collect()
}

/// Renders observations one entry per line.
pub fn serialize_log(observations: &[MiObservation]) -> String {
    let mut out = String::new();
    for o in observations {
        out.push_str(&serialize_line(o));
        out.push('\n');
    }
    out
}

/// Splits a chronological stream into sessions wherever time runs backwards
/// or the gap exceeds `max_gap` seconds.
pub fn split_sessions(observations: &[MiObservation], max_gap: f64) -> Vec<Vec<MiObservation>> {
    let mut sessions: Vec<Vec<MiObservation>> = Vec::new();
    for o in observations {
        let new_session = match sessions.last().and_then(|s| s.last()) {
            Some(prev) => {
                let dt = o.timestamp - prev.timestamp;
                dt <= 0.0 || dt > max_gap
            }
            None => true,
        };
        if new_session {
            sessions.push(Vec::new());
        }
        sessions.last_mut().expect("pushed above").push(*o);
    }
    sessions
}

/// One logged `(x_t, a_t, x_{t+1})` step and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub state: StateFeature,
    pub action: Action,
    pub next_state: StateFeature,
    pub next_obs: MiObservation,
    /// Utility of the interval in which `state` was measured.
    pub utility: f64,
}

/// Per-dimension min/max of the feature vectors in a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub min: [f64; FEATURE_DIM],
    pub max: [f64; FEATURE_DIM],
}

impl FeatureScaling {
    fn empty() -> Self {
        Self {
            min: [f64::INFINITY; FEATURE_DIM],
            max: [f64::NEG_INFINITY; FEATURE_DIM],
        }
    }

    fn include(&mut self, f: &StateFeature) {
        for (i, v) in f.as_array().into_iter().enumerate() {
            self.min[i] = self.min[i].min(v);
            self.max[i] = self.max[i].max(v);
        }
    }

    /// Maps each dimension onto `[0, 1]`; constant dimensions map to 0.
    pub fn normalize(&self, f: &StateFeature) -> [f64; FEATURE_DIM] {
        let mut out = [0.0; FEATURE_DIM];
        for (i, v) in f.as_array().into_iter().enumerate() {
            let range = self.max[i] - self.min[i];
            out[i] = if range > 0.0 { (v - self.min[i]) / range } else { 0.0 };
        }
        out
    }

    pub fn covers(&self, f: &StateFeature) -> bool {
        f.as_array()
            .into_iter()
            .enumerate()
            .all(|(i, v)| self.min[i] <= v && v <= self.max[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionDataset {
    /// Content hash identifying the dataset.
    pub id: String,
    pub bounds: Bounds,
    pub feature_scaling: FeatureScaling,
    pub records: Vec<TransitionRecord>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325_u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Transitions of one chronological session, with features computed against
/// the running minimum RTT.
pub fn session_transitions(
    observations: &[MiObservation],
    bounds: &Bounds,
    reward: &RewardConfig,
) -> Result<Vec<TransitionRecord>> {
    let mut records = Vec::with_capacity(observations.len().saturating_sub(1));
    let Some(first) = observations.first() else {
        return Ok(records);
    };
    let mut min_rtt = first.mean_rtt;
    let mut state = feature_of(first, None, min_rtt);
    for pair in observations.windows(2) {
        let (cur, next) = (&pair[0], &pair[1]);
        let dcc = i64::from(next.cc) - i64::from(cur.cc);
        let dp = i64::from(next.p) - i64::from(cur.p);
        let illegal = || Error::IllegalTransition {
            from: (cur.cc, cur.p),
            to: (next.cc, next.p),
            t_from: cur.timestamp,
            t_to: next.timestamp,
        };
        let action = Action::from_delta(dcc, dp).ok_or_else(illegal)?;
        if apply_action(cur.params(), action, bounds) != next.params() {
            return Err(illegal());
        }
        min_rtt = min_rtt.min(next.mean_rtt);
        let next_state = feature_of(next, Some(cur.mean_rtt), min_rtt);
        records.push(TransitionRecord {
            state,
            action,
            next_state,
            next_obs: *next,
            utility: utility(cur.throughput, cur.plr, cur.cc, cur.p, reward.k_const, reward.b_const),
        });
        state = next_state;
    }
    Ok(records)
}

impl TransitionDataset {
    /// Assembles a dataset from one or more sessions; each session yields
    /// `len - 1` records.
    pub fn from_sessions(sessions: &[Vec<MiObservation>], bounds: Bounds, reward: &RewardConfig) -> Result<Self> {
        bounds.validate()?;
        let mut records = Vec::new();
        for s in sessions {
            records.extend(session_transitions(s, &bounds, reward)?);
        }
        Self::from_records(records, bounds)
    }

    pub fn from_records(records: Vec<TransitionRecord>, bounds: Bounds) -> Result<Self> {
        let mut scaling = FeatureScaling::empty();
        for r in &records {
            if !bounds.contains(r.state.params()) || !bounds.contains(r.next_state.params()) {
                return Err(Error::invalid(format!(
                    "record parameters {:?} -> {:?} outside bounds",
                    r.state.params(),
                    r.next_state.params()
                )));
            }
            scaling.include(&r.state);
            scaling.include(&r.next_state);
        }
        if records.is_empty() {
            scaling = FeatureScaling {
                min: [0.0; FEATURE_DIM],
                max: [0.0; FEATURE_DIM],
            };
        }
        let id = format!("{:016x}", fnv1a(&serde_json::to_vec(&records)?));
        Ok(Self {
            id,
            bounds,
            feature_scaling: scaling,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Builds the dataset of a single chronological session.
pub fn build_transitions(observations: &[MiObservation], bounds: Bounds, reward: &RewardConfig) -> Result<TransitionDataset> {
    TransitionDataset::from_sessions(&[observations.to_vec()], bounds, reward)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = "1707718539.468927 -- INFO: Throughput:8.32Gbps lossRate:0 parallelism:7 concurrency:7 score:3.0 rtt:34.6ms energy:80.0J";

    fn obs(t: f64, cc: u32, p: u32) -> MiObservation {
        MiObservation {
            timestamp: t,
            throughput: 5e9,
            plr: 1e-5,
            mean_rtt: 0.035,
            energy: 40.0,
            cc,
            p,
            score: 0.0,
        }
    }

    #[test]
    fn parses_the_sample_entry() {
        let o = parse_line(SAMPLE).unwrap();
        assert_eq!(o.timestamp, 1707718539.468927);
        assert_eq!(o.throughput, 8.32e9);
        assert_eq!(o.plr, 0.0);
        assert_eq!((o.cc, o.p), (7, 7));
        assert_eq!(o.score, 3.0);
        assert!((o.mean_rtt - 0.0346).abs() < 1e-15);
        assert_eq!(o.energy, 80.0);
    }

    #[test]
    fn sample_round_trips_byte_exact() {
        assert_eq!(serialize_line(&parse_line(SAMPLE).unwrap()), SAMPLE);
    }

    #[test]
    fn multiline_entry_parses() {
        let text = "1707718539.468927 -- INFO: \nThroughput:8.32Gbps \nlossRate:0 \nparallelism:7 \nconcurrency:7 \nscore:3.0 \nrtt:34.6ms \nenergy:80.0J \n";
        assert_eq!(parse_line(text).unwrap(), parse_line(SAMPLE).unwrap());
        assert_eq!(parse_log(&format!("{text}{text}")).unwrap().len(), 2);
    }

    #[test]
    fn formatting_rules() {
        let mut o = parse_line(SAMPLE).unwrap();
        o.mean_rtt = 0.0346;
        assert!(serialize_line(&o).contains("rtt:34.6ms"));
        assert!(serialize_line(&o).contains("lossRate:0 "));
        o.plr = 2.5e-5;
        assert!(serialize_line(&o).contains("lossRate:0.000025 "));
    }

    #[test]
    fn missing_field_is_named() {
        let line = SAMPLE.replace(" energy:80.0J", "");
        match parse_line(&line) {
            Err(Error::Parse { field, .. }) => assert_eq!(field, "energy"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_values_are_named() {
        let cases = [
            (SAMPLE.replace("8.32Gbps", "fastGbps"), "throughput"),
            (SAMPLE.replace("8.32Gbps", "8.32"), "throughput"),
            (SAMPLE.replace("parallelism:7", "parallelism:x"), "parallelism"),
            (SAMPLE.replace("34.6ms", "34.6"), "rtt"),
            (SAMPLE.replace("lossRate:0", "lossRate:2"), "lossRate"),
            (SAMPLE.replace("1707718539.468927", "yesterday"), "timestamp"),
        ];
        for (line, expect) in cases {
            match parse_line(&line) {
                Err(Error::Parse { field, .. }) => assert_eq!(field, expect, "{line}"),
                other => panic!("{line}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn infers_actions() {
        let b = Bounds::default();
        let r = RewardConfig::default();
        let ds = build_transitions(&[obs(0.0, 7, 7), obs(1.0, 8, 8), obs(2.0, 8, 8)], b, &r).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.records[0].action, Action::Inc1);
        assert_eq!(ds.records[1].action, Action::Hold);
        assert_eq!(ds.records[0].next_obs, obs(1.0, 8, 8));
    }

    #[test]
    fn rejects_jumps_with_timestamps() {
        let err = build_transitions(&[obs(10.0, 4, 4), obs(11.0, 7, 7)], Bounds::default(), &RewardConfig::default())
            .unwrap_err();
        match err {
            Error::IllegalTransition { from, to, t_from, t_to } => {
                assert_eq!((from, to), ((4, 4), (7, 7)));
                assert_eq!((t_from, t_to), (10.0, 11.0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn clamped_steps_infer_hold() {
        let ds = build_transitions(&[obs(0.0, 16, 16), obs(1.0, 16, 16)], Bounds::default(), &RewardConfig::default())
            .unwrap();
        assert_eq!(ds.records[0].action, Action::Hold);
    }

    #[test]
    fn sessions_split_on_gaps() {
        let o = [obs(0.0, 4, 4), obs(1.0, 5, 5), obs(100.0, 4, 4), obs(101.0, 4, 4), obs(50.0, 4, 4)];
        let s = split_sessions(&o, 5.0);
        assert_eq!(s.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 1]);
    }

    #[test]
    fn dataset_json_round_trip() {
        let ds = build_transitions(&[obs(0.0, 4, 4), obs(1.0, 5, 5), obs(2.0, 3, 3)], Bounds::default(), &RewardConfig::default())
            .unwrap();
        let back = TransitionDataset::from_json(&ds.to_json().unwrap()).unwrap();
        assert_eq!(back, ds);
        assert!(ds.records.iter().all(|r| ds.feature_scaling.covers(&r.state)));
    }
}
