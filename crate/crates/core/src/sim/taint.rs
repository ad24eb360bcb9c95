//! Byte-level scans for confidential values in each observer's view.
//!
//! Clauses:
//! - (a) a reading, or its encoded report block, in the fusion center's or
//!   the attacker's view;
//! - (b) the threshold in any user's view;
//! - (c) another user's report payload in a user's view;
//! - (d) an OPE ciphertext in the attacker's view.
//!
//! Short patterns (a 16-bit reading) match random ciphertext bytes by
//! chance. A raw hit is therefore confirmed only if the same value shows up
//! at the same entry and offset in re-runs that keep the readings but draw
//! fresh protocol randomness: a real leak is positional and survives, a
//! chance match does not.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::channel::{ChannelMode, Party};
use crate::group_key::MemberId;
use crate::protocol::value_bytes;

use super::harness::run_scenario;
use super::scenario::Scenario;
use super::transcript::{Observer, Receiver, RoundTranscript, RoundTruth};
use super::SimError;

#[derive(Debug, Error)]
pub enum TaintError {
    #[error("the taint suite refuses to run over null channels")]
    NullChannel,
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Clause {
    /// (a)
    ReadingVisible,
    /// (b)
    ThresholdVisible,
    /// (c)
    ForeignReport,
    /// (d)
    CiphertextOnWire,
}

impl Clause {
    pub fn label(self) -> &'static str {
        match self {
            Clause::ReadingVisible => "a",
            Clause::ThresholdVisible => "b",
            Clause::ForeignReport => "c",
            Clause::CiphertextOnWire => "d",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Hit {
    pub clause: Clause,
    pub round: u64,
    pub entry: usize,
    pub offset: usize,
    pub observer: Observer,
    /// The user whose value leaked (none for the threshold).
    pub owner: Option<MemberId>,
}

fn find_all(haystack: &[u8], needle: &[u8]) -> Vec<usize> {
    if needle.is_empty() {
        return Vec::new();
    }
    haystack
        .windows(needle.len())
        .enumerate()
        .filter(|(_, w)| *w == needle)
        .map(|(i, _)| i)
        .collect()
}

fn scan(
    t: &RoundTranscript,
    observer: Observer,
    clause: Clause,
    owner: Option<MemberId>,
    needle: &[u8],
    hits: &mut Vec<Hit>,
) {
    for (entry, bytes) in t.view(observer) {
        for offset in find_all(bytes, needle) {
            hits.push(Hit {
                clause,
                round: t.round,
                entry,
                offset,
                observer,
                owner,
            });
        }
    }
}

/// Unconfirmed hits of every clause in one round.
pub fn taint_check(t: &RoundTranscript, truth: &RoundTruth) -> Vec<Hit> {
    let mut hits = Vec::new();
    let block_len = truth.ope_plaintext_bits.div_ceil(8) as usize;
    for (&id, &r) in &truth.rss {
        let reading = value_bytes(r, truth.gamma);
        let block = truth
            .report_plaintexts
            .get(&id)
            .map(|m| m.to_be_bytes()[16 - block_len..].to_vec());
        for observer in [Observer::Fc, Observer::Attacker] {
            scan(
                t,
                observer,
                Clause::ReadingVisible,
                Some(id),
                &reading,
                &mut hits,
            );
            if let Some(block) = &block {
                scan(
                    t,
                    observer,
                    Clause::ReadingVisible,
                    Some(id),
                    block,
                    &mut hits,
                );
            }
        }
    }
    for c in truth.ope_ciphertexts.iter() {
        scan(
            t,
            Observer::Attacker,
            Clause::CiphertextOnWire,
            Some(*c.0),
            c.1,
            &mut hits,
        );
    }
    let users: BTreeSet<MemberId> = t
        .entries
        .iter()
        .flat_map(|e| {
            let mut v = Vec::new();
            if let Party::Su(i) = e.sender {
                v.push(i);
            }
            if let Receiver::Party(Party::Su(i)) = e.receiver {
                v.push(i);
            }
            v
        })
        .chain(truth.rss.keys().copied())
        .collect();
    let tau = value_bytes(truth.tau, truth.gamma);
    for &i in &users {
        scan(
            t,
            Observer::Su(i),
            Clause::ThresholdVisible,
            None,
            &tau,
            &mut hits,
        );
        for (&j, payload) in &truth.report_payloads {
            if j != i {
                scan(
                    t,
                    Observer::Su(i),
                    Clause::ForeignReport,
                    Some(j),
                    payload,
                    &mut hits,
                );
            }
        }
    }
    hits
}

#[derive(Clone, Debug, Default)]
pub struct TaintReport {
    pub rounds: usize,
    /// Hits before confirmation.
    pub raw_hits: usize,
    /// Hits reproduced in every confirmation run.
    pub confirmed: Vec<Hit>,
}

impl TaintReport {
    pub fn passed(&self) -> bool {
        self.confirmed.is_empty()
    }

    pub fn clauses(&self) -> BTreeSet<Clause> {
        self.confirmed.iter().map(|h| h.clause).collect()
    }
}

fn all_hits(rounds: &[RoundTranscript]) -> BTreeSet<Hit> {
    rounds
        .iter()
        .flat_map(|t| taint_check(t, &t.truth))
        .collect()
}

/// Runs `scenario` (normally with sentinel readings), scans every round and
/// confirms raw hits against `confirm_runs` re-runs with fresh randomness.
pub fn taint_suite(scenario: &Scenario, confirm_runs: u64) -> Result<TaintReport, TaintError> {
    if scenario.channel_mode == ChannelMode::Null {
        return Err(TaintError::NullChannel);
    }
    let base = scenario.crypto_seed.unwrap_or(scenario.seed);
    let rounds = run_scenario(scenario)?;
    let mut candidates = all_hits(&rounds);
    let raw_hits = candidates.len();
    for k in 1..=confirm_runs {
        if candidates.is_empty() {
            break;
        }
        let mut rerun = scenario.clone();
        rerun.crypto_seed = Some(base ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let again = all_hits(&run_scenario(&rerun)?);
        candidates.retain(|h| again.contains(h));
    }
    Ok(TaintReport {
        rounds: rounds.len(),
        raw_hits,
        confirmed: candidates.into_iter().collect(),
    })
}
