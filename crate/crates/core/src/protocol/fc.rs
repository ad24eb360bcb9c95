use std::collections::BTreeMap;

use rand_chacha::ChaCha20Rng;

use crate::channel::ChannelEnd;
use crate::group_key::MemberId;
use crate::gt::{self, ElGamalKeyPair, GtInitiator};
use crate::ope::OpeCiphertext;

use super::decision::{decide, sort_reports, Decision, DistinctReport, Outcome};
use super::wire::{decode_report_payload, Frame, MsgKind};
use super::{compute_lambda, FaultReport, ProtocolError, SensingConfig, TransportError};

/// Carries sealed comparison frames between the fusion center and a user.
pub trait ComparisonTransport {
    /// Delivers a sealed GT_INIT to `user` and returns its sealed GT_RESP.
    fn exchange(&mut self, user: MemberId, gt_init: Vec<u8>) -> Result<Vec<u8>, TransportError>;

    /// Called with every GT_RESP after the fusion center opened it.
    fn opened_at_fc(&mut self, _user: MemberId, _frame: &[u8]) {}
}

/// Reports of one round, grouped and sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FcRoundState {
    pub round: u64,
    pub reports: BTreeMap<MemberId, OpeCiphertext>,
    pub sorted: Vec<DistinctReport>,
    pub n_active: usize,
    pub lambda: usize,
}

/// One comparison session of a round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Invocation {
    pub user: MemberId,
    /// Index into the distinct sorted values of the attempt.
    pub index: usize,
    /// `[tau >= r]`, or `None` if the session failed.
    pub b: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundResult {
    pub decision: Decision,
    /// The state the decision was taken on (after any restart).
    pub state: FcRoundState,
    /// Sessions of every attempt, failed ones included.
    pub invocations: Vec<Invocation>,
    /// Sessions of the successful attempt only.
    pub final_attempt_invocations: usize,
    pub dropped: Vec<MemberId>,
}

struct CompareFailure {
    user: MemberId,
    error: ProtocolError,
}

/// The fusion center: threshold, comparison key pair with a precomputed
/// threshold table, and one channel per user. Holds no reading in the clear.
#[derive(Debug)]
pub struct FcEngine {
    config: SensingConfig,
    initiator: GtInitiator,
    epoch: u64,
    channels: BTreeMap<MemberId, ChannelEnd>,
    rng: ChaCha20Rng,
}

impl FcEngine {
    pub fn new(
        config: SensingConfig,
        epoch: u64,
        mut rng: ChaCha20Rng,
    ) -> Result<Self, ProtocolError> {
        let initiator = Self::fresh_initiator(&config, &mut rng)?;
        Ok(FcEngine {
            config,
            initiator,
            epoch,
            channels: BTreeMap::new(),
            rng,
        })
    }

    fn fresh_initiator(
        config: &SensingConfig,
        rng: &mut ChaCha20Rng,
    ) -> Result<GtInitiator, ProtocolError> {
        let gtp = config.public.gt.clone();
        let keypair = ElGamalKeyPair::generate(&gtp.group, rng);
        Ok(GtInitiator::with_fixed_input(
            gtp, keypair, config.tau, rng,
        )?)
    }

    pub fn config(&self) -> &SensingConfig {
        &self.config
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn comparison_public_key(&self) -> &num_bigint::BigUint {
        self.initiator.public_key()
    }

    pub fn add_channel(&mut self, user: MemberId, channel: ChannelEnd) {
        self.channels.insert(user, channel);
    }

    pub fn remove_channel(&mut self, user: MemberId) {
        self.channels.remove(&user);
    }

    pub fn users(&self) -> impl Iterator<Item = MemberId> + '_ {
        self.channels.keys().copied()
    }

    /// Moves to a new epoch after a membership change; optionally replaces
    /// the comparison key pair.
    pub fn advance_epoch(&mut self, epoch: u64) -> Result<(), ProtocolError> {
        if epoch <= self.epoch {
            return Err(ProtocolError::EpochMismatch {
                expected: self.epoch + 1,
                got: epoch,
            });
        }
        self.epoch = epoch;
        if self.config.refresh_pi_on_membership {
            self.initiator = Self::fresh_initiator(&self.config, &mut self.rng)?;
        }
        Ok(())
    }

    fn channel(&mut self, user: MemberId) -> Result<&mut ChannelEnd, ProtocolError> {
        self.channels
            .get_mut(&user)
            .ok_or(ProtocolError::UnknownUser(user))
    }

    /// Opens and validates a sealed REPORT from `user`. Returns the
    /// ciphertext and the opened frame.
    pub fn open_report(
        &mut self,
        round: u64,
        user: MemberId,
        wire: &[u8],
    ) -> Result<(OpeCiphertext, Vec<u8>), ProtocolError> {
        let opened = self.channel(user)?.open(wire)?;
        let frame = Frame::decode(&opened)?.expect(MsgKind::Report)?;
        if frame.epoch != self.epoch {
            return Err(ProtocolError::EpochMismatch {
                expected: self.epoch,
                got: frame.epoch,
            });
        }
        if frame.round != round {
            return Err(ProtocolError::RoundMismatch {
                expected: round,
                got: frame.round,
            });
        }
        let public = &self.config.public;
        let trailing = if public.debug_leak_plaintext_rss {
            public.gamma.div_ceil(8) as usize
        } else {
            0
        };
        let (claimed, c) = decode_report_payload(&frame.payload, &public.ope, trailing)?;
        if claimed != user {
            return Err(ProtocolError::IdMismatch {
                channel: user,
                claimed,
            });
        }
        Ok((c, opened))
    }

    /// Groups the round's reports and sets `lambda` for the active count.
    pub fn collect(
        &self,
        round: u64,
        reports: BTreeMap<MemberId, OpeCiphertext>,
    ) -> Result<FcRoundState, ProtocolError> {
        let n_active = reports.len();
        let lambda = compute_lambda(self.config.lambda, n_active)?;
        Ok(FcRoundState {
            round,
            sorted: sort_reports(&reports),
            reports,
            n_active,
            lambda,
        })
    }

    /// Runs the search. A failed comparison drops that user and restarts
    /// the round once; a second failure aborts it.
    pub fn sensing_round(
        &mut self,
        mut state: FcRoundState,
        transport: &mut dyn ComparisonTransport,
    ) -> Result<RoundResult, ProtocolError> {
        let mut invocations = Vec::new();
        let mut dropped = Vec::new();
        let mut failures = Vec::new();
        for _attempt in 0..2 {
            let start = invocations.len();
            let mut probes = Vec::new();
            let sorted = state.sorted.clone();
            let result = decide(&sorted, state.lambda, &mut probes, |i| {
                let user = sorted[i].representative;
                match self.compare(state.round, user, transport) {
                    Ok(b) => {
                        invocations.push(Invocation {
                            user,
                            index: i,
                            b: Some(b),
                        });
                        Ok(b)
                    }
                    Err(error) => {
                        invocations.push(Invocation {
                            user,
                            index: i,
                            b: None,
                        });
                        Err(CompareFailure { user, error })
                    }
                }
            });
            match result {
                Ok(decision) => {
                    return Ok(RoundResult {
                        decision,
                        final_attempt_invocations: invocations.len() - start,
                        state,
                        invocations,
                        dropped,
                    })
                }
                Err(CompareFailure { user, error }) => {
                    failures.push((user, error.to_string()));
                    dropped.push(user);
                    let mut reports = state.reports.clone();
                    reports.remove(&user);
                    match self.collect(state.round, reports) {
                        Ok(s) => state = s,
                        Err(_) => break,
                    }
                }
            }
        }
        Err(ProtocolError::RoundAborted(FaultReport {
            round: state.round,
            failures,
        }))
    }

    fn compare(
        &mut self,
        round: u64,
        user: MemberId,
        transport: &mut dyn ComparisonTransport,
    ) -> Result<bool, ProtocolError> {
        let init = self.initiator.initiate_precomputed(&mut self.rng)?;
        let session = init.session;
        let frame = Frame::new(
            MsgKind::GtInit,
            round,
            self.epoch,
            gt::encode_init(self.initiator.params(), &init),
        );
        let sealed = self.channel(user)?.seal(&frame.encode())?;
        let outcome = (|| {
            let reply = transport.exchange(user, sealed)?;
            let opened = self.channel(user)?.open(&reply)?;
            transport.opened_at_fc(user, &opened);
            let frame = Frame::decode(&opened)?.expect(MsgKind::GtResp)?;
            if frame.round != round || frame.epoch != self.epoch {
                return Err(ProtocolError::Malformed("response for another round"));
            }
            let resp = gt::decode_response(self.initiator.params(), &frame.payload)?;
            if resp.session != session {
                return Err(ProtocolError::Malformed("response for another session"));
            }
            // The user evaluated r > tau; b is its negation.
            Ok(!self.initiator.finalize(&resp)?)
        })();
        if outcome.is_err() {
            self.initiator.abandon(session);
        }
        outcome
    }

    /// Plain DECISION broadcast.
    pub fn decision_frame(&self, round: u64, outcome: Outcome) -> Vec<u8> {
        Frame::new(
            MsgKind::Decision,
            round,
            self.epoch,
            vec![outcome.as_byte()],
        )
        .encode()
    }
}
