//! Fusion-center and secondary-user state machines.
//!
//! Users report order-preserving encryptions of their readings under the
//! group key; the fusion center sorts them and locates the threshold with at
//! most `2 + ceil(log2 u)` secure comparisons against representative users.

pub mod config;
pub mod decision;
pub mod fc;
pub mod su;
pub mod wire;

use thiserror::Error;

use crate::channel::ChannelError;
use crate::group_key::{GroupKeyError, MemberId};
use crate::gt::GtError;
use crate::ope::OpeError;

pub use config::{compute_lambda, LambdaPolicy, PublicParams, SensingConfig};
pub use decision::{
    decide, invocation_bound, oracle_decision, sort_reports, Decision, DistinctReport, Exit,
    Outcome,
};
pub use fc::{ComparisonTransport, FcEngine, FcRoundState, Invocation, RoundResult};
pub use su::SuEngine;
pub use wire::{Frame, MsgKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("user {0} did not answer")]
    NoResponse(MemberId),
    #[error("user {user}: {reason}")]
    Peer { user: MemberId, reason: String },
}

/// Users whose comparison sessions failed before a round was abandoned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultReport {
    pub round: u64,
    pub failures: Vec<(MemberId, String)>,
}

impl std::fmt::Display for FaultReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "round {}:", self.round)?;
        for (u, why) in &self.failures {
            write!(f, " [user {u}: {why}]")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("no reports: round has no quorum")]
    NoQuorum,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed frame: {0}")]
    Malformed(&'static str),
    #[error("expected {expected} frame, got {got}")]
    UnexpectedFrame {
        expected: &'static str,
        got: &'static str,
    },
    #[error("frame from epoch {got}, current epoch is {expected}")]
    EpochMismatch { expected: u64, got: u64 },
    #[error("frame for round {got}, current round is {expected}")]
    RoundMismatch { expected: u64, got: u64 },
    #[error("no channel with user {0}")]
    UnknownUser(MemberId),
    #[error("report from user {channel} claims id {claimed}")]
    IdMismatch {
        channel: MemberId,
        claimed: MemberId,
    },
    #[error("reading {0} out of range")]
    RssRange(u64),
    #[error("round aborted after repeated comparison failures ({0})")]
    RoundAborted(FaultReport),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Gt(#[from] GtError),
    #[error(transparent)]
    Ope(#[from] OpeError),
    #[error(transparent)]
    GroupKey(#[from] GroupKeyError),
}

/// Label under which the OPE key is derived from the group key.
pub const OPE_KEY_LABEL: &[u8] = b"lpos/rss-report";

/// Big-endian `ceil(gamma / 8)`-byte encoding of a reading or threshold.
pub fn value_bytes(v: u64, gamma: u32) -> Vec<u8> {
    let n = gamma.div_ceil(8) as usize;
    v.to_be_bytes()[8 - n..].to_vec()
}
