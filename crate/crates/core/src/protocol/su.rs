use rand_chacha::ChaCha20Rng;

use crate::channel::ChannelEnd;
use crate::group_key::{MemberId, MemberView};
use crate::gt::{self, Comparison};
use crate::ope::{derive_ope_key, encode_report, ope_encrypt, OpeCiphertext, OpeKey};

use super::wire::{encode_report_payload, Frame, MsgKind};
use super::{value_bytes, ProtocolError, PublicParams, OPE_KEY_LABEL};

/// A secondary user: its key-tree view, the derived OPE key, its channel to
/// the fusion center and its current reading.
#[derive(Debug)]
pub struct SuEngine {
    id: MemberId,
    params: PublicParams,
    view: MemberView,
    ope_key: OpeKey,
    channel: ChannelEnd,
    rss: u64,
    round: u64,
    rng: ChaCha20Rng,
}

impl SuEngine {
    pub fn new(
        id: MemberId,
        params: PublicParams,
        view: MemberView,
        channel: ChannelEnd,
        rng: ChaCha20Rng,
    ) -> Result<Self, ProtocolError> {
        let ope_key = derive_ope_key(view.derive_group_key()?.as_bytes(), OPE_KEY_LABEL)?;
        Ok(SuEngine {
            id,
            params,
            view,
            ope_key,
            channel,
            rss: 0,
            round: 0,
            rng,
        })
    }

    pub fn id(&self) -> MemberId {
        self.id
    }

    pub fn epoch(&self) -> u64 {
        self.view.epoch()
    }

    /// Adopts the tree after a rekey.
    pub fn install_view(&mut self, view: MemberView) -> Result<(), ProtocolError> {
        self.ope_key = derive_ope_key(view.derive_group_key()?.as_bytes(), OPE_KEY_LABEL)?;
        self.view = view;
        Ok(())
    }

    pub fn set_rss(&mut self, rss: u64) -> Result<(), ProtocolError> {
        if rss > self.params.rss_max() {
            return Err(ProtocolError::RssRange(rss));
        }
        self.rss = rss;
        Ok(())
    }

    pub fn ope_ciphertext(&self) -> Result<OpeCiphertext, ProtocolError> {
        let p = &self.params;
        let m = encode_report(p.padding, self.rss, p.gamma, &p.ope)?;
        Ok(ope_encrypt(&self.ope_key, m, &p.ope)?)
    }

    /// Sealed REPORT for `round`, plus the frame before sealing.
    pub fn build_report(&mut self, round: u64) -> Result<(Vec<u8>, Vec<u8>), ProtocolError> {
        self.round = round;
        let c = self.ope_ciphertext()?;
        let mut payload = encode_report_payload(self.id, c, &self.params.ope);
        if self.params.debug_leak_plaintext_rss {
            payload.extend_from_slice(&value_bytes(self.rss, self.params.gamma));
        }
        let frame = Frame::new(MsgKind::Report, round, self.epoch(), payload).encode();
        let wire = self.channel.seal(&frame)?;
        Ok((wire, frame))
    }

    /// Opens a frame from the fusion center.
    pub fn open(&mut self, wire: &[u8]) -> Result<Vec<u8>, ProtocolError> {
        Ok(self.channel.open(wire)?)
    }

    /// Answers an opened GT_INIT with a sealed GT_RESP.
    pub fn respond(&mut self, opened: &[u8]) -> Result<Vec<u8>, ProtocolError> {
        let frame = Frame::decode(opened)?.expect(MsgKind::GtInit)?;
        if frame.epoch != self.epoch() {
            return Err(ProtocolError::EpochMismatch {
                expected: self.epoch(),
                got: frame.epoch,
            });
        }
        if frame.round != self.round {
            return Err(ProtocolError::RoundMismatch {
                expected: self.round,
                got: frame.round,
            });
        }
        let gtp = &self.params.gt;
        let init = gt::decode_init(gtp, &frame.payload)?;
        let resp = gt::gt_respond(
            gtp,
            self.rss,
            &init,
            Comparison::ResponderGreater,
            &mut self.rng,
        )?;
        let out = Frame::new(
            MsgKind::GtResp,
            frame.round,
            frame.epoch,
            gt::encode_response(gtp, &resp),
        );
        Ok(self.channel.seal(&out.encode())?)
    }
}
