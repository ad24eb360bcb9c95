//! Scenario description and its line-oriented text format.
//!
//! ```text
//! # comments start with '#'
//! n = 16
//! rounds = 10
//! tau = 120
//! gamma = 16
//! lambda = auto          # or an integer
//! seed = 42
//! profile = test         # or nist
//! rss = uniform 0 240    # | energy <mean dBm> <spread dB> | sentinel | explicit
//! rss.3 = 1 2 3 4        # explicit readings for round 3, one per reporter
//! drop = 3:5             # at round 3, 5 users stop reporting (repeatable)
//! join = 2:4
//! leave = 4:1
//! stall = 5:1            # at round 5, the top reporter ignores comparisons
//! refresh_pi = false
//! parallel = false
//! ```

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

use crate::channel::ChannelMode;
use crate::protocol::LambdaPolicy;

use super::Profile;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    /// Users stop sending reports from this round on.
    Drop,
    /// New users join the group before this round.
    Join,
    /// Users leave the group before this round.
    Leave,
    /// The users holding the highest readings receive but never answer
    /// comparison requests during this round.
    Stall,
}

impl EventKind {
    fn key(self) -> &'static str {
        match self {
            EventKind::Drop => "drop",
            EventKind::Join => "join",
            EventKind::Leave => "leave",
            EventKind::Stall => "stall",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub round: u64,
    pub kind: EventKind,
    pub count: usize,
}

impl Event {
    /// Parses `R:K`.
    pub fn parse(kind: EventKind, spec: &str) -> Result<Self, String> {
        let (r, k) = spec
            .split_once(':')
            .ok_or_else(|| format!("expected ROUND:COUNT, got {spec:?}"))?;
        let round = r
            .trim()
            .parse()
            .map_err(|_| format!("bad round in {spec:?}"))?;
        let count = k
            .trim()
            .parse()
            .map_err(|_| format!("bad count in {spec:?}"))?;
        Ok(Event { round, kind, count })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RssModel {
    /// Uniform integers in `lo..=hi`.
    Uniform { lo: u64, hi: u64 },
    /// dBm uniform in `mean ± spread`, quantized.
    Energy { mean_dbm: f64, spread_db: f64 },
    /// Distinct high-entropy values for taint scans.
    Sentinel,
    /// Readings per round (1-based), one per reporter in id order.
    Explicit(BTreeMap<u64, Vec<u64>>),
}

pub const FLOOR_DBM: f64 = -120.0;
pub const STEP_DB: f64 = 0.01;

/// `clamp(round((dbm - floor) / step), 0, 2^gamma - 1)`.
pub fn quantize_dbm(dbm: f64, gamma: u32) -> u64 {
    let max = ((1u64 << gamma) - 1) as f64;
    ((dbm - FLOOR_DBM) / STEP_DB).round().clamp(0.0, max) as u64
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub n: usize,
    pub rounds: u64,
    pub tau: u64,
    pub gamma: u32,
    pub lambda: LambdaPolicy,
    pub seed: u64,
    /// Overrides the seed of protocol randomness only; readings and event
    /// choices still follow `seed`.
    pub crypto_seed: Option<u64>,
    pub profile: Profile,
    pub rss: RssModel,
    pub events: Vec<Event>,
    pub refresh_pi: bool,
    pub channel_mode: ChannelMode,
    pub leak_plaintext_rss: bool,
    pub parallel: bool,
}

impl Scenario {
    /// `n` users, readings uniform in `0..=min(2 tau, 2^gamma - 1)`.
    pub fn new(n: usize, rounds: u64, tau: u64, gamma: u32, seed: u64) -> Self {
        let max = if gamma >= 64 {
            u64::MAX
        } else {
            (1u64 << gamma) - 1
        };
        Scenario {
            n,
            rounds,
            tau,
            gamma,
            lambda: LambdaPolicy::HalfVoting,
            seed,
            crypto_seed: None,
            profile: Profile::Test,
            rss: RssModel::Uniform {
                lo: 0,
                hi: tau.saturating_mul(2).min(max),
            },
            events: Vec::new(),
            refresh_pi: false,
            channel_mode: ChannelMode::Encrypted,
            leak_plaintext_rss: false,
            parallel: false,
        }
    }

    pub fn with_event(mut self, round: u64, kind: EventKind, count: usize) -> Self {
        self.events.push(Event { round, kind, count });
        self
    }

    pub fn events_at(&self, round: u64, kind: EventKind) -> usize {
        self.events
            .iter()
            .filter(|e| e.round == round && e.kind == kind)
            .map(|e| e.count)
            .sum()
    }

    /// Checks parameters and replays the membership counts of every round.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.n == 0 {
            return Err(invalid("n must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(invalid("rounds must be at least 1"));
        }
        if !(1..=32).contains(&self.gamma) {
            return Err(invalid(format!("gamma = {} not in 1..=32", self.gamma)));
        }
        let max = (1u64 << self.gamma) - 1;
        if self.tau > max {
            return Err(invalid(format!("tau = {} exceeds {max}", self.tau)));
        }
        if let LambdaPolicy::Fixed(0) = self.lambda {
            return Err(invalid("lambda must be at least 1"));
        }
        match &self.rss {
            RssModel::Uniform { lo, hi } if lo > hi || *hi > max => {
                return Err(invalid(format!(
                    "uniform range {lo}..={hi} invalid for gamma"
                )));
            }
            RssModel::Energy { spread_db, .. } if spread_db.is_nan() || *spread_db < 0.0 => {
                return Err(invalid("energy spread must be non-negative"));
            }
            RssModel::Sentinel if !self.gamma.is_multiple_of(8) => {
                return Err(invalid("sentinel readings need a byte-aligned gamma"));
            }
            _ => {}
        }
        for e in &self.events {
            if e.round == 0 || e.round > self.rounds {
                return Err(invalid(format!(
                    "{} event at round {} outside 1..={}",
                    e.kind.key(),
                    e.round,
                    self.rounds
                )));
            }
        }
        let mut members = self.n;
        let mut dropped = 0usize;
        for round in 1..=self.rounds {
            let leave = self.events_at(round, EventKind::Leave);
            if leave >= members {
                return Err(invalid(format!(
                    "round {round}: leaving {leave} of {members} members would empty the group"
                )));
            }
            // Leavers are taken from the reporting users first.
            let reporting = members - dropped;
            if leave > reporting {
                dropped -= leave - reporting;
            }
            members = members - leave + self.events_at(round, EventKind::Join);
            let drop = self.events_at(round, EventKind::Drop);
            if drop > members - dropped {
                return Err(invalid(format!(
                    "round {round}: cannot drop {drop} of {} reporting users",
                    members - dropped
                )));
            }
            dropped += drop;
            let reporters = members - dropped;
            if let RssModel::Explicit(map) = &self.rss {
                let v = map
                    .get(&round)
                    .ok_or_else(|| invalid(format!("no explicit readings for round {round}")))?;
                if v.len() != reporters {
                    return Err(invalid(format!(
                        "round {round}: {} explicit readings for {reporters} reporters",
                        v.len()
                    )));
                }
                if let Some(r) = v.iter().find(|&&r| r > max) {
                    return Err(invalid(format!("reading {r} exceeds {max}")));
                }
            }
        }
        Ok(())
    }
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, got {v:?}")),
    }
}

pub fn parse_lambda(v: &str) -> Result<LambdaPolicy, String> {
    if v == "auto" {
        return Ok(LambdaPolicy::HalfVoting);
    }
    v.parse()
        .map(LambdaPolicy::Fixed)
        .map_err(|_| format!("lambda must be an integer or \"auto\", got {v:?}"))
}

fn num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("bad number {v:?}"))
}

impl FromStr for Scenario {
    type Err = ScenarioError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut s = Scenario::new(1, 1, 0, 16, 0);
        let mut tau_set = false;
        let mut rss_line: Option<(usize, String)> = None;
        let mut explicit = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |msg: String| ScenarioError::Parse { line, msg };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let r: Result<(), String> = (|| {
                match key {
                    "n" => s.n = num(value)?,
                    "rounds" => s.rounds = num(value)?,
                    "tau" => {
                        s.tau = num(value)?;
                        tau_set = true;
                    }
                    "gamma" => s.gamma = num(value)?,
                    "lambda" => s.lambda = parse_lambda(value)?,
                    "seed" => s.seed = num(value)?,
                    "profile" => s.profile = value.parse()?,
                    "rss" => rss_line = Some((line, value.to_string())),
                    "refresh_pi" => s.refresh_pi = parse_bool(value)?,
                    "parallel" => s.parallel = parse_bool(value)?,
                    "drop" | "join" | "leave" | "stall" => {
                        let kind = match key {
                            "drop" => EventKind::Drop,
                            "join" => EventKind::Join,
                            "leave" => EventKind::Leave,
                            _ => EventKind::Stall,
                        };
                        s.events.push(Event::parse(kind, value)?);
                    }
                    k if k.starts_with("rss.") => {
                        let round: u64 = num(&k[4..])?;
                        let values = value
                            .split(|c: char| c == ',' || c.is_whitespace())
                            .filter(|t| !t.is_empty())
                            .map(num)
                            .collect::<Result<Vec<u64>, _>>()?;
                        explicit.insert(round, values);
                    }
                    _ => return Err(format!("unknown key {key:?}")),
                }
                Ok(())
            })();
            r.map_err(err)?;
        }
        let max = (1u64 << s.gamma.min(63)) - 1;
        s.rss =
            match rss_line {
                None => RssModel::Uniform {
                    lo: 0,
                    hi: s.tau.saturating_mul(2).min(max),
                },
                Some((line, spec)) => {
                    let err = |msg: &str| ScenarioError::Parse {
                        line,
                        msg: msg.into(),
                    };
                    let parts: Vec<&str> = spec.split_whitespace().collect();
                    match parts.as_slice() {
                        ["uniform", lo, hi] => RssModel::Uniform {
                            lo: num(lo).map_err(|e| err(&e))?,
                            hi: num(hi).map_err(|e| err(&e))?,
                        },
                        ["energy", mean, spread] => RssModel::Energy {
                            mean_dbm: num(mean).map_err(|e| err(&e))?,
                            spread_db: num(spread).map_err(|e| err(&e))?,
                        },
                        ["sentinel"] => RssModel::Sentinel,
                        ["explicit"] => RssModel::Explicit(std::mem::take(&mut explicit)),
                        _ => return Err(err(
                            "rss must be uniform LO HI, energy MEAN SPREAD, sentinel or explicit",
                        )),
                    }
                }
            };
        if !explicit.is_empty() {
            return Err(invalid("rss.N lines require `rss = explicit`"));
        }
        if !tau_set {
            return Err(invalid("tau is required"));
        }
        s.validate()?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_format() {
        let text = "\
# demo
n = 4
rounds = 3
tau = 10
gamma = 8
lambda = 2
seed = 9
profile = test
rss = explicit
rss.1 = 1 2 3 4
rss.2 = 5, 6, 7, 8
rss.3 = 9 10 11 12 13 14
join = 3:2
refresh_pi = yes
";
        let s: Scenario = text.parse().unwrap();
        assert_eq!((s.n, s.rounds, s.tau, s.gamma, s.seed), (4, 3, 10, 8, 9));
        assert_eq!(s.lambda, LambdaPolicy::Fixed(2));
        assert!(s.refresh_pi);
        assert_eq!(
            s.events,
            [Event {
                round: 3,
                kind: EventKind::Join,
                count: 2
            }]
        );
        match s.rss {
            RssModel::Explicit(m) => assert_eq!(m[&2], [5, 6, 7, 8]),
            _ => panic!("expected explicit"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = "n = 4\nbogus = 1\ntau = 3".parse::<Scenario>().unwrap_err();
        assert!(matches!(e, ScenarioError::Parse { line: 2, .. }), "{e:?}");
        assert!("n = 4".parse::<Scenario>().is_err());
        assert!("n = 0\ntau = 1".parse::<Scenario>().is_err());
        assert!("tau = 1\ndrop = 3".parse::<Scenario>().is_err());
    }

    #[test]
    fn validation_replays_membership() {
        let base = Scenario::new(4, 3, 10, 8, 1);
        assert!(base
            .clone()
            .with_event(2, EventKind::Leave, 3)
            .validate()
            .is_ok());
        assert!(base
            .clone()
            .with_event(2, EventKind::Leave, 4)
            .validate()
            .is_err());
        assert!(base
            .clone()
            .with_event(4, EventKind::Drop, 1)
            .validate()
            .is_err());
        assert!(base
            .clone()
            .with_event(1, EventKind::Drop, 2)
            .with_event(2, EventKind::Drop, 3)
            .validate()
            .is_err());
        assert!(base
            .with_event(1, EventKind::Drop, 2)
            .with_event(2, EventKind::Join, 3)
            .with_event(3, EventKind::Drop, 5)
            .validate()
            .is_ok());
    }

    #[test]
    fn quantization() {
        assert_eq!(quantize_dbm(-120.0, 16), 0);
        assert_eq!(quantize_dbm(-130.0, 16), 0);
        assert_eq!(quantize_dbm(-100.0, 16), 2000);
        assert_eq!(quantize_dbm(-119.994, 16), 1);
        assert_eq!(quantize_dbm(1e6, 16), 65535);
    }
}
