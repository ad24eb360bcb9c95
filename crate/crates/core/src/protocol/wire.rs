//! Protocol frames: `tag (1) || round (8, BE) || epoch (8, BE) || len (4, BE) || payload`.

use crate::group_key::MemberId;
use crate::ope::{OpeCiphertext, OpeParams};

use super::ProtocolError;

pub const HEADER_LEN: usize = 21;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MsgKind {
    Report = 1,
    GtInit = 2,
    GtResp = 3,
    Decision = 4,
    EpochUpdate = 5,
}

impl MsgKind {
    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => MsgKind::Report,
            2 => MsgKind::GtInit,
            3 => MsgKind::GtResp,
            4 => MsgKind::Decision,
            5 => MsgKind::EpochUpdate,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgKind::Report => "REPORT",
            MsgKind::GtInit => "GT_INIT",
            MsgKind::GtResp => "GT_RESP",
            MsgKind::Decision => "DECISION",
            MsgKind::EpochUpdate => "EPOCH_UPDATE",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub kind: MsgKind,
    pub round: u64,
    pub epoch: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: MsgKind, round: u64, epoch: u64, payload: Vec<u8>) -> Self {
        Frame {
            kind,
            round,
            epoch,
            payload,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.round.to_be_bytes());
        out.extend_from_slice(&self.epoch.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        if bytes.len() < HEADER_LEN {
            return Err(ProtocolError::Malformed("frame shorter than header"));
        }
        let kind = MsgKind::from_tag(bytes[0]).ok_or(ProtocolError::Malformed("unknown tag"))?;
        let round = u64::from_be_bytes(bytes[1..9].try_into().expect("8 bytes"));
        let epoch = u64::from_be_bytes(bytes[9..17].try_into().expect("8 bytes"));
        let len = u32::from_be_bytes(bytes[17..21].try_into().expect("4 bytes")) as usize;
        if bytes.len() != HEADER_LEN + len {
            return Err(ProtocolError::Malformed("length prefix mismatch"));
        }
        Ok(Frame {
            kind,
            round,
            epoch,
            payload: bytes[HEADER_LEN..].to_vec(),
        })
    }

    pub fn expect(self, kind: MsgKind) -> Result<Self, ProtocolError> {
        if self.kind != kind {
            return Err(ProtocolError::UnexpectedFrame {
                expected: kind.name(),
                got: self.kind.name(),
            });
        }
        Ok(self)
    }
}

/// REPORT payload: user id (4, BE) followed by the OPE ciphertext.
pub fn encode_report_payload(user: MemberId, c: OpeCiphertext, ope: &OpeParams) -> Vec<u8> {
    let mut out = user.to_be_bytes().to_vec();
    out.extend_from_slice(&c.to_bytes(ope));
    out
}

/// Parses a REPORT payload; `trailing` extra bytes are tolerated only for
/// the leak negative control.
pub fn decode_report_payload(
    payload: &[u8],
    ope: &OpeParams,
    trailing: usize,
) -> Result<(MemberId, OpeCiphertext), ProtocolError> {
    let clen = ope.ciphertext_len();
    if payload.len() != 4 + clen + trailing {
        return Err(ProtocolError::Malformed("report payload length"));
    }
    let user = MemberId::from_be_bytes(payload[..4].try_into().expect("4 bytes"));
    let c = OpeCiphertext::from_bytes(&payload[4..4 + clen], ope)?;
    Ok((user, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_layout_and_round_trip() {
        let f = Frame::new(MsgKind::Decision, 3, 7, vec![1]);
        let bytes = f.encode();
        assert_eq!(
            bytes,
            [4, 0, 0, 0, 0, 0, 0, 0, 3, 0, 0, 0, 0, 0, 0, 0, 7, 0, 0, 0, 1, 1]
        );
        assert_eq!(Frame::decode(&bytes).unwrap(), f);
        assert!(Frame::decode(&bytes[..20]).is_err());
        let mut bad = bytes.clone();
        bad[0] = 9;
        assert!(Frame::decode(&bad).is_err());
        bad = bytes.clone();
        bad.push(0);
        assert!(Frame::decode(&bad).is_err());
    }

    #[test]
    fn report_payload() {
        let ope = OpeParams::for_rss_bits(16).unwrap();
        let p = encode_report_payload(9, OpeCiphertext(0x0102), &ope);
        assert_eq!(p, [0, 0, 0, 9, 0, 0, 0, 0, 0, 0, 1, 2]);
        assert_eq!(
            decode_report_payload(&p, &ope, 0).unwrap(),
            (9, OpeCiphertext(0x0102))
        );
        assert!(decode_report_payload(&p[..11], &ope, 0).is_err());
    }
}
