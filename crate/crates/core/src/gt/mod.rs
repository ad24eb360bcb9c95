//! Secure two-party greater-than over ElGamal (Lin-Tzeng style).
//!
//! The initiator encrypts its input bit by bit into a `2 x l` table: entry
//! `(position i, value v)` encrypts the identity when the initiator's bit at
//! `i` equals `v`, and a random group element otherwise. The responder
//! multiplies table entries along each string of its encoding set, blinds each
//! product with a random exponent and returns the batch shuffled. A product
//! decrypts to the identity exactly when its string matches a prefix of the
//! initiator's input, so only the key holder learns the comparison bit.

pub mod elgamal;
pub mod encoding;

use std::collections::BTreeSet;

use num_bigint::BigUint;
use num_traits::One;
use rand::seq::SliceRandom;
use rand::RngCore;
use thiserror::Error;

use crate::group::GroupSetupError;
pub use elgamal::{elgamal_setup, Ciphertext, ElGamalKeyPair, ElGamalParams};
pub use encoding::{encoding_one, encoding_zero, BitString};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GtError {
    #[error("invalid comparison parameters: {0}")]
    Params(String),
    #[error("value {value} does not fit in {bits} bits")]
    InputRange { value: u64, bits: u32 },
    #[error("malformed comparison message: {0}")]
    Malformed(String),
    #[error("unknown or finished session {0}")]
    UnknownSession(u64),
    #[error(transparent)]
    Setup(#[from] GroupSetupError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SessionId(pub u64);

/// Which strict inequality the responder evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Comparison {
    /// `initiator > responder`, via the responder's 0-encoding.
    InitiatorGreater,
    /// `responder > initiator`, via the responder's 1-encoding with the last
    /// bit of every string flipped.
    ResponderGreater,
}

/// The initiator's encrypted bit table. Rows run from the most significant
/// position `l` down to position `1`; each row holds the entries for bit
/// value 0 and bit value 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GtInitMessage {
    pub session: SessionId,
    pub table: Vec<[Ciphertext; 2]>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GtResponse {
    pub session: SessionId,
    pub ciphertexts: Vec<Ciphertext>,
}

fn check_input(v: u64, l: u32) -> Result<(), GtError> {
    if v >> l != 0 {
        return Err(GtError::InputRange { value: v, bits: l });
    }
    Ok(())
}

fn build_table<R: RngCore + ?Sized>(
    params: &ElGamalParams,
    pk: &BigUint,
    x: u64,
    rng: &mut R,
) -> Result<Vec<[Ciphertext; 2]>, GtError> {
    check_input(x, params.l)?;
    let g = &params.group;
    let one = BigUint::one();
    Ok((1..=params.l)
        .rev()
        .map(|pos| {
            let bit = ((x >> (pos - 1)) & 1) as usize;
            let mut row: [Option<Ciphertext>; 2] = [None, None];
            for (v, slot) in row.iter_mut().enumerate() {
                let m = if v == bit {
                    one.clone()
                } else {
                    g.random_element(rng)
                };
                *slot = Some(elgamal::encrypt(g, pk, &m, rng));
            }
            row.map(|c| c.expect("both entries filled"))
        })
        .collect())
}

/// Fresh `2 x l` table for `x` under the key pair's public key.
pub fn gt_initiate<R: RngCore + ?Sized>(
    params: &ElGamalParams,
    keypair: &ElGamalKeyPair,
    x: u64,
    session: SessionId,
    rng: &mut R,
) -> Result<GtInitMessage, GtError> {
    Ok(GtInitMessage {
        session,
        table: build_table(params, keypair.public(), x, rng)?,
    })
}

/// A table built once for a fixed input and re-randomized per session.
#[derive(Clone, Debug)]
pub struct PrecomputedTable {
    table: Vec<[Ciphertext; 2]>,
}

impl PrecomputedTable {
    pub fn new<R: RngCore + ?Sized>(
        params: &ElGamalParams,
        keypair: &ElGamalKeyPair,
        x: u64,
        rng: &mut R,
    ) -> Result<Self, GtError> {
        Ok(PrecomputedTable {
            table: build_table(params, keypair.public(), x, rng)?,
        })
    }

    pub fn session_message<R: RngCore + ?Sized>(
        &self,
        params: &ElGamalParams,
        pk: &BigUint,
        session: SessionId,
        rng: &mut R,
    ) -> GtInitMessage {
        let g = &params.group;
        let table = self
            .table
            .iter()
            .map(|row| row.clone().map(|c| elgamal::rerandomize(g, pk, &c, rng)))
            .collect();
        GtInitMessage { session, table }
    }
}

fn validate_init(params: &ElGamalParams, init: &GtInitMessage) -> Result<(), GtError> {
    if init.table.len() != params.l as usize {
        return Err(GtError::Malformed(format!(
            "table has {} rows, expected {}",
            init.table.len(),
            params.l
        )));
    }
    let g = &params.group;
    for c in init.table.iter().flatten() {
        if !g.contains(&c.a) || !g.contains(&c.b) {
            return Err(GtError::Malformed(
                "table element outside the subgroup".into(),
            ));
        }
    }
    Ok(())
}

/// Responder side: combines the table along every string of its encoding
/// set, blinds each product by a random exponent and shuffles the batch.
pub fn gt_respond<R: RngCore + ?Sized>(
    params: &ElGamalParams,
    y: u64,
    init: &GtInitMessage,
    comparison: Comparison,
    rng: &mut R,
) -> Result<GtResponse, GtError> {
    check_input(y, params.l)?;
    validate_init(params, init)?;
    let strings = match comparison {
        Comparison::InitiatorGreater => encoding_zero(y, params.l)?,
        Comparison::ResponderGreater => encoding_one(y, params.l)?
            .into_iter()
            .map(|s| s.flip_last())
            .collect(),
    };
    let g = &params.group;
    let mut ciphertexts: Vec<Ciphertext> = strings
        .iter()
        .map(|s| {
            let combined = (1..s.len()).fold(
                init.table[0][s.bit_from_left(0) as usize].clone(),
                |acc, k| {
                    let entry = &init.table[k as usize][s.bit_from_left(k) as usize];
                    elgamal::mul(g, &acc, entry)
                },
            );
            let blind = g.random_scalar(rng);
            elgamal::pow(g, &combined, &blind)
        })
        .collect();
    ciphertexts.shuffle(rng);
    Ok(GtResponse {
        session: init.session,
        ciphertexts,
    })
}

/// True iff any response ciphertext decrypts to the identity.
pub fn gt_finalize(params: &ElGamalParams, keypair: &ElGamalKeyPair, resp: &GtResponse) -> bool {
    resp.ciphertexts
        .iter()
        .any(|c| elgamal::is_identity(&params.group, keypair.secret(), c))
}

/// Initiator state: key pair, optional precomputed table and live sessions.
/// Session ids come from a 64-bit counter and are accepted once.
#[derive(Debug)]
pub struct GtInitiator {
    params: ElGamalParams,
    keypair: ElGamalKeyPair,
    precomputed: Option<PrecomputedTable>,
    next_session: u64,
    live: BTreeSet<u64>,
}

impl GtInitiator {
    pub fn new(params: ElGamalParams, keypair: ElGamalKeyPair) -> Self {
        GtInitiator {
            params,
            keypair,
            precomputed: None,
            next_session: 1,
            live: BTreeSet::new(),
        }
    }

    /// Precomputes the table for the fixed input `x`.
    pub fn with_fixed_input<R: RngCore + ?Sized>(
        params: ElGamalParams,
        keypair: ElGamalKeyPair,
        x: u64,
        rng: &mut R,
    ) -> Result<Self, GtError> {
        let table = PrecomputedTable::new(&params, &keypair, x, rng)?;
        let mut init = GtInitiator::new(params, keypair);
        init.precomputed = Some(table);
        Ok(init)
    }

    pub fn params(&self) -> &ElGamalParams {
        &self.params
    }

    pub fn public_key(&self) -> &BigUint {
        self.keypair.public()
    }

    fn open_session(&mut self) -> SessionId {
        let id = self.next_session;
        self.next_session += 1;
        self.live.insert(id);
        SessionId(id)
    }

    /// Opens a session with a freshly encrypted table for `x`.
    pub fn initiate<R: RngCore + ?Sized>(
        &mut self,
        x: u64,
        rng: &mut R,
    ) -> Result<GtInitMessage, GtError> {
        check_input(x, self.params.l)?;
        let session = self.open_session();
        gt_initiate(&self.params, &self.keypair, x, session, rng)
    }

    /// Opens a session with a re-randomized copy of the precomputed table.
    pub fn initiate_precomputed<R: RngCore + ?Sized>(
        &mut self,
        rng: &mut R,
    ) -> Result<GtInitMessage, GtError> {
        if self.precomputed.is_none() {
            return Err(GtError::Params("no precomputed table".into()));
        }
        let session = self.open_session();
        let table = self.precomputed.as_ref().expect("checked above");
        Ok(table.session_message(&self.params, self.keypair.public(), session, rng))
    }

    /// Closes the session and returns the comparison bit.
    pub fn finalize(&mut self, resp: &GtResponse) -> Result<bool, GtError> {
        if !self.live.remove(&resp.session.0) {
            return Err(GtError::UnknownSession(resp.session.0));
        }
        if resp.ciphertexts.len() > self.params.l as usize {
            return Err(GtError::Malformed("response longer than l".into()));
        }
        Ok(gt_finalize(&self.params, &self.keypair, resp))
    }

    /// Drops a session whose response never arrived.
    pub fn abandon(&mut self, session: SessionId) {
        self.live.remove(&session.0);
    }

    pub fn live_sessions(&self) -> usize {
        self.live.len()
    }
}

/// One complete comparison with the initiator as sole learner:
/// returns `b = [tau >= r]`, computed as `NOT (r > tau)`.
pub fn ym_compare<R: RngCore + ?Sized>(
    initiator: &mut GtInitiator,
    tau: u64,
    r: u64,
    rng: &mut R,
) -> Result<bool, GtError> {
    let params = initiator.params().clone();
    let init = initiator.initiate(tau, rng)?;
    let resp = gt_respond(&params, r, &init, Comparison::ResponderGreater, rng)?;
    Ok(!initiator.finalize(&resp)?)
}

pub fn encode_init(params: &ElGamalParams, msg: &GtInitMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + msg.table.len() * 2 * params.ciphertext_len());
    out.extend_from_slice(&msg.session.0.to_be_bytes());
    out.extend_from_slice(&(msg.table.len() as u16).to_be_bytes());
    for c in msg.table.iter().flatten() {
        elgamal::encode_ciphertext(&params.group, c, &mut out);
    }
    out
}

pub fn decode_init(params: &ElGamalParams, bytes: &[u8]) -> Result<GtInitMessage, GtError> {
    let (session, rows, body) = split_header(bytes)?;
    let w = params.ciphertext_len();
    if body.len() != rows * 2 * w {
        return Err(GtError::Malformed("table length mismatch".into()));
    }
    let cts = decode_list(params, body)?;
    let table = cts
        .chunks_exact(2)
        .map(|pair| [pair[0].clone(), pair[1].clone()])
        .collect();
    Ok(GtInitMessage { session, table })
}

pub fn encode_response(params: &ElGamalParams, msg: &GtResponse) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + msg.ciphertexts.len() * params.ciphertext_len());
    out.extend_from_slice(&msg.session.0.to_be_bytes());
    out.extend_from_slice(&(msg.ciphertexts.len() as u16).to_be_bytes());
    for c in &msg.ciphertexts {
        elgamal::encode_ciphertext(&params.group, c, &mut out);
    }
    out
}

pub fn decode_response(params: &ElGamalParams, bytes: &[u8]) -> Result<GtResponse, GtError> {
    let (session, count, body) = split_header(bytes)?;
    if body.len() != count * params.ciphertext_len() {
        return Err(GtError::Malformed("response length mismatch".into()));
    }
    Ok(GtResponse {
        session,
        ciphertexts: decode_list(params, body)?,
    })
}

fn split_header(bytes: &[u8]) -> Result<(SessionId, usize, &[u8]), GtError> {
    if bytes.len() < 10 {
        return Err(GtError::Malformed("truncated header".into()));
    }
    let session = u64::from_be_bytes(bytes[..8].try_into().expect("8 bytes"));
    let count = u16::from_be_bytes([bytes[8], bytes[9]]) as usize;
    Ok((SessionId(session), count, &bytes[10..]))
}

fn decode_list(params: &ElGamalParams, body: &[u8]) -> Result<Vec<Ciphertext>, GtError> {
    body.chunks_exact(params.ciphertext_len())
        .map(|chunk| {
            elgamal::decode_ciphertext(&params.group, chunk)
                .ok_or_else(|| GtError::Malformed("group element out of range".into()))
        })
        .collect()
}
