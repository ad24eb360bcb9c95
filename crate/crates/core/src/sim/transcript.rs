use std::collections::BTreeMap;
use std::io::Write;

use crate::channel::Party;
use crate::group_key::MemberId;
use crate::protocol::{Decision, FaultReport, Invocation, MsgKind, Outcome};

/// Who received a message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Receiver {
    Party(Party),
    /// Sent in the clear to every party.
    Broadcast,
}

/// A party whose knowledge a view captures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Observer {
    Fc,
    Su(MemberId),
    /// Passive eavesdropper on every link.
    Attacker,
}

/// One message on the bus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub sender: Party,
    pub receiver: Receiver,
    pub kind: MsgKind,
    /// Bytes on the wire.
    pub wire: Vec<u8>,
    /// The protocol frame before sealing (equal to `wire` for plain frames).
    pub frame: Vec<u8>,
    /// Whether the receiver opened the frame.
    pub delivered: bool,
}

impl Entry {
    pub fn sealed(&self) -> bool {
        !matches!(self.kind, MsgKind::Decision | MsgKind::EpochUpdate)
    }

    fn touches(&self, p: Party) -> bool {
        self.sender == p
            || match self.receiver {
                Receiver::Broadcast => true,
                Receiver::Party(r) => r == p && self.delivered,
            }
    }

    /// Bytes of this entry that `observer` sees, if any.
    pub fn visible_to(&self, observer: Observer) -> Option<&[u8]> {
        match observer {
            Observer::Attacker => Some(&self.wire),
            Observer::Fc => self.touches(Party::Fc).then_some(&self.frame[..]),
            Observer::Su(i) => self.touches(Party::Su(i)).then_some(&self.frame[..]),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CostMetrics {
    pub ym_invocations: u64,
    pub bytes_su_to_fc: u64,
    pub bytes_fc_to_su: u64,
    pub ope_encryptions: u64,
    pub modexp_count: u64,
    pub rekey_messages: u64,
}

/// Harness-side ground truth for a round; never visible to any party.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RoundTruth {
    pub tau: u64,
    pub gamma: u32,
    /// Readings of the users who reported.
    pub rss: BTreeMap<MemberId, u64>,
    /// `0 || D || r` per reporting user.
    pub report_plaintexts: BTreeMap<MemberId, u128>,
    pub ope_plaintext_bits: u32,
    /// Serialized OPE ciphertexts per reporting user.
    pub ope_ciphertexts: BTreeMap<MemberId, Vec<u8>>,
    /// Serialized REPORT payloads per reporting user.
    pub report_payloads: BTreeMap<MemberId, Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundTranscript {
    pub round: u64,
    pub epoch: u64,
    pub members: usize,
    /// Reports the decision was based on (after any restart).
    pub n_active: usize,
    pub lambda: usize,
    pub entries: Vec<Entry>,
    /// `None` when the round had no quorum or was aborted.
    pub decision: Option<Decision>,
    /// Decision of the brute-force oracle on the same reports and lambda.
    pub oracle: Option<Outcome>,
    pub invocations: Vec<Invocation>,
    pub distinct_values: usize,
    pub dropped_in_round: Vec<MemberId>,
    pub fault: Option<FaultReport>,
    pub rejected_reports: Vec<(MemberId, String)>,
    pub metrics: CostMetrics,
    pub truth: RoundTruth,
}

impl RoundTranscript {
    pub fn view(&self, observer: Observer) -> Vec<(usize, &[u8])> {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.visible_to(observer).map(|b| (i, b)))
            .collect()
    }

    pub fn count(&self, kind: MsgKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }

    /// Wire bytes of GT_INIT and GT_RESP frames.
    pub fn comparison_bytes(&self) -> u64 {
        self.entries
            .iter()
            .filter(|e| matches!(e.kind, MsgKind::GtInit | MsgKind::GtResp))
            .map(|e| e.wire.len() as u64)
            .sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.entries.iter().map(|e| e.wire.len() as u64).sum()
    }

    pub fn agrees_with_oracle(&self) -> bool {
        match (self.decision, self.oracle) {
            (Some(d), Some(o)) => d.outcome == o,
            (None, None) => true,
            _ => false,
        }
    }
}

pub const CSV_HEADER: [&str; 9] = [
    "round",
    "n_active",
    "decision",
    "ym_invocations",
    "bytes_su_to_fc",
    "bytes_fc_to_su",
    "ope_encryptions",
    "modexp_count",
    "rekey_messages",
];

/// One row per round.
pub fn write_metrics_csv<W: Write>(out: W, rounds: &[RoundTranscript]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for t in rounds {
        let m = &t.metrics;
        let decision = t
            .decision
            .map(|d| d.outcome.to_string())
            .unwrap_or_else(|| "none".into());
        w.write_record([
            t.round.to_string(),
            t.n_active.to_string(),
            decision,
            m.ym_invocations.to_string(),
            m.bytes_su_to_fc.to_string(),
            m.bytes_fc_to_su.to_string(),
            m.ope_encryptions.to_string(),
            m.modexp_count.to_string(),
            m.rekey_messages.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
