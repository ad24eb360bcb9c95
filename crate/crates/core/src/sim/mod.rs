//! Deterministic multi-party simulation: one fusion center, `n` users, a
//! logical bus with per-observer transcripts, scripted membership events,
//! taint scans and cost metering.

pub mod harness;
pub mod scenario;
pub mod taint;
pub mod transcript;

use std::str::FromStr;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::channel::ChannelError;
use crate::group::SchnorrGroup;
use crate::group_key::GroupKeyError;
use crate::protocol::ProtocolError;

pub use harness::{run_scenario, Simulation};
pub use scenario::{Event, EventKind, RssModel, Scenario, ScenarioError};
pub use taint::{taint_check, taint_suite, Clause, Hit, TaintError, TaintReport};
pub use transcript::{
    write_metrics_csv, CostMetrics, Entry, Observer, Receiver, RoundTranscript, RoundTruth,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    GroupKey(#[from] GroupKeyError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Group parameters for every discrete-log component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Profile {
    /// 64-bit modulus, 32-bit subgroup: fast, insecure.
    #[default]
    Test,
    /// 1024-bit modulus, 160-bit subgroup.
    Nist,
}

impl Profile {
    pub fn group(self) -> SchnorrGroup {
        static TEST: OnceLock<SchnorrGroup> = OnceLock::new();
        match self {
            Profile::Test => TEST
                .get_or_init(|| {
                    SchnorrGroup::generate(64, 32, &mut ChaCha20Rng::seed_from_u64(0x4c50_4f53))
                        .expect("test group parameters are valid")
                })
                .clone(),
            Profile::Nist => SchnorrGroup::rfc5114_1024_160(),
        }
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "test" => Ok(Profile::Test),
            "nist" => Ok(Profile::Nist),
            _ => Err(format!("unknown profile {s:?} (expected test or nist)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelMode, Party};
    use crate::protocol::{invocation_bound, Exit, MsgKind, Outcome};

    #[test]
    fn seeded_runs_are_identical() {
        let s = Scenario::new(8, 10, 100, 8, 1);
        let a = run_scenario(&s).unwrap();
        let b = run_scenario(&s).unwrap();
        assert_eq!(a, b);
        let mut other = s.clone();
        other.seed = 2;
        assert_ne!(a, run_scenario(&other).unwrap());
    }

    #[test]
    fn every_round_matches_oracle_and_bound() {
        let s = Scenario::new(12, 20, 100, 8, 3);
        for t in run_scenario(&s).unwrap() {
            assert!(t.agrees_with_oracle(), "round {}", t.round);
            assert!(t.invocations.len() <= invocation_bound(t.distinct_values));
            assert_eq!(t.metrics.ym_invocations as usize, t.count(MsgKind::GtInit));
            assert_eq!(t.count(MsgKind::GtInit), t.count(MsgKind::GtResp));
            assert_eq!(t.count(MsgKind::Report), 12);
            assert_eq!(t.count(MsgKind::Decision), 1);
            assert_eq!(
                t.metrics.bytes_su_to_fc + t.metrics.bytes_fc_to_su,
                t.total_bytes()
            );
        }
    }

    #[test]
    fn drops_shrink_the_quorum() {
        let s = Scenario::new(16, 5, 100, 8, 4).with_event(3, EventKind::Drop, 5);
        for t in run_scenario(&s).unwrap() {
            let expect = if t.round >= 3 { 11 } else { 16 };
            assert_eq!(t.n_active, expect);
            assert_eq!(t.lambda, expect.div_ceil(2));
            assert!(t.agrees_with_oracle());
        }
    }

    #[test]
    fn join_bumps_epoch_once() {
        let s = Scenario::new(4, 3, 100, 8, 5).with_event(2, EventKind::Join, 4);
        let rounds = run_scenario(&s).unwrap();
        assert_eq!(rounds[0].epoch + 1, rounds[1].epoch);
        assert_eq!(rounds[1].epoch, rounds[2].epoch);
        assert_eq!(rounds[1].count(MsgKind::Report), 8);
        assert!(rounds[1].metrics.rekey_messages > 0);
        assert_eq!(rounds[2].metrics.rekey_messages, 0);
    }

    #[test]
    fn combined_membership_window() {
        let s = Scenario::new(6, 2, 100, 8, 6)
            .with_event(2, EventKind::Join, 2)
            .with_event(2, EventKind::Leave, 1);
        let rounds = run_scenario(&s).unwrap();
        assert_eq!(rounds[1].epoch, rounds[0].epoch + 1);
        assert_eq!((rounds[1].members, rounds[1].lambda), (7, 4));
    }

    #[test]
    fn leave_down_to_one() {
        let s = Scenario::new(5, 2, 100, 8, 7).with_event(2, EventKind::Leave, 4);
        let rounds = run_scenario(&s).unwrap();
        assert_eq!((rounds[1].n_active, rounds[1].lambda), (1, 1));
        assert!(rounds[1].decision.is_some());
        assert!(rounds[1].agrees_with_oracle());
    }

    #[test]
    fn one_stall_restarts_two_abort() {
        let s = Scenario::new(8, 2, 100, 8, 8)
            .with_event(1, EventKind::Stall, 1)
            .with_event(2, EventKind::Stall, 2);
        let rounds = run_scenario(&s).unwrap();
        let r1 = &rounds[0];
        assert_eq!(r1.dropped_in_round.len(), 1);
        assert_eq!(r1.n_active, 7);
        assert!(r1.decision.is_some() && r1.agrees_with_oracle());
        assert!(r1.invocations.iter().any(|i| i.b.is_none()));
        let r2 = &rounds[1];
        assert!(r2.decision.is_none());
        assert_eq!(r2.fault.as_ref().unwrap().failures.len(), 2);
        assert_eq!(r2.count(MsgKind::Decision), 0);
    }

    #[test]
    fn shortcut_exits() {
        let mut s = Scenario::new(3, 2, 50, 8, 9);
        s.rss = RssModel::Explicit([(1, vec![1, 2, 3]), (2, vec![60, 70, 80])].into());
        let rounds = run_scenario(&s).unwrap();
        let d1 = rounds[0].decision.unwrap();
        assert_eq!(
            (d1.outcome, d1.exit, rounds[0].invocations.len()),
            (Outcome::Free, Exit::MaxShortcut, 1)
        );
        let d2 = rounds[1].decision.unwrap();
        assert_eq!(
            (d2.outcome, d2.exit, rounds[1].invocations.len()),
            (Outcome::Busy, Exit::MinShortcut, 2)
        );
    }

    #[test]
    fn parallel_mode_matches_sequential() {
        let mut s = Scenario::new(9, 4, 100, 8, 10).with_event(3, EventKind::Join, 2);
        let seq = run_scenario(&s).unwrap();
        s.parallel = true;
        assert_eq!(seq, run_scenario(&s).unwrap());
    }

    #[test]
    fn taint_scan_honest_and_leaky() {
        let mut s = Scenario::new(4, 3, 0x9AC5, 16, 12);
        s.rss = RssModel::Sentinel;
        let report = taint_suite(&s, 2).unwrap();
        assert!(report.passed(), "{:?}", report.confirmed);
        s.leak_plaintext_rss = true;
        let report = taint_suite(&s, 2).unwrap();
        assert!(!report.passed());
        assert!(report.clauses().contains(&Clause::ReadingVisible));
        s.leak_plaintext_rss = false;
        s.channel_mode = ChannelMode::Null;
        assert!(matches!(taint_suite(&s, 1), Err(TaintError::NullChannel)));
    }

    #[test]
    fn views_partition_by_observer() {
        let s = Scenario::new(3, 1, 100, 8, 13);
        let t = &run_scenario(&s).unwrap()[0];
        let attacker = t.view(Observer::Attacker).len();
        assert_eq!(attacker, t.entries.len());
        for (i, _) in t.view(Observer::Su(1)) {
            let e = &t.entries[i];
            assert!(e.sender == Party::Su(1) || e.receiver != Receiver::Party(Party::Fc));
        }
        assert!(t.view(Observer::Su(1)).iter().all(|(i, _)| {
            let e = &t.entries[*i];
            !(e.kind == MsgKind::Report && e.sender != Party::Su(1))
        }));
    }
}
