//! Pairwise authenticated channels between the fusion center and each user.
//!
//! Static DH in the Schnorr group, HKDF-SHA256 into one key per direction,
//! ChaCha20-Poly1305 with a 64-bit counter nonce. Wire frame:
//! `nonce (8, BE) || ciphertext || tag (16)`.

use std::collections::BTreeMap;
use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use num_bigint::BigUint;
use rand::RngCore;
use sha2::Sha256;
use thiserror::Error;

use crate::group::SchnorrGroup;
use crate::group_key::MemberId;

pub const NONCE_LEN: usize = 8;
pub const TAG_LEN: usize = 16;
pub const FRAME_OVERHEAD: usize = NONCE_LEN + TAG_LEN;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("no static key registered for {0}")]
    UnknownIdentity(Party),
    #[error("a party cannot open a channel to itself")]
    SelfChannel,
    #[error("nonce space exhausted")]
    Exhausted,
    #[error("frame shorter than {FRAME_OVERHEAD} bytes")]
    Truncated,
    #[error("replayed or reordered frame: expected nonce {expected}, got {got}")]
    Replay { expected: u64, got: u64 },
    #[error("authentication failed")]
    Authentication,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Party {
    Fc,
    Su(MemberId),
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Fc => f.write_str("fc"),
            Party::Su(i) => write!(f, "su{i}"),
        }
    }
}

#[derive(Clone)]
struct StaticKey {
    secret: BigUint,
    public: BigUint,
}

/// Static DH keys known to the harness.
#[derive(Clone)]
pub struct Registry {
    group: SchnorrGroup,
    keys: BTreeMap<Party, StaticKey>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("parties", &self.keys.keys().collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

impl Registry {
    pub fn new(group: SchnorrGroup) -> Self {
        Registry {
            group,
            keys: BTreeMap::new(),
        }
    }

    /// Generates (or replaces) the static key of `party`; returns its public part.
    pub fn register<R: RngCore + ?Sized>(&mut self, party: Party, rng: &mut R) -> BigUint {
        let secret = self.group.random_scalar(rng);
        let public = self.group.exp_g(&secret);
        self.keys.insert(
            party,
            StaticKey {
                secret,
                public: public.clone(),
            },
        );
        public
    }

    pub fn public_key(&self, party: Party) -> Option<&BigUint> {
        self.keys.get(&party).map(|k| &k.public)
    }

    pub fn contains(&self, party: Party) -> bool {
        self.keys.contains_key(&party)
    }

    fn get(&self, party: Party) -> Result<&StaticKey, ChannelError> {
        self.keys
            .get(&party)
            .ok_or(ChannelError::UnknownIdentity(party))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ChannelMode {
    #[default]
    Encrypted,
    /// Debugging only: frames carry the plaintext and an all-zero tag.
    Null,
}

/// One end of a pairwise channel.
#[derive(Clone)]
pub struct ChannelEnd {
    local: Party,
    peer: Party,
    mode: ChannelMode,
    pair_key: [u8; 32],
    send: ChaCha20Poly1305,
    recv: ChaCha20Poly1305,
    send_ctr: u64,
    recv_ctr: u64,
}

impl fmt::Debug for ChannelEnd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChannelEnd")
            .field("local", &self.local)
            .field("peer", &self.peer)
            .field("mode", &self.mode)
            .field("send_ctr", &self.send_ctr)
            .field("recv_ctr", &self.recv_ctr)
            .finish_non_exhaustive()
    }
}

fn direction_info(from: Party, to: Party) -> String {
    format!("lpos/chn/{from}->{to}")
}

impl ChannelEnd {
    /// Derives `local`'s end from its own secret and the peer's public key.
    pub fn derive(
        registry: &Registry,
        local: Party,
        peer: Party,
        mode: ChannelMode,
    ) -> Result<Self, ChannelError> {
        if local == peer {
            return Err(ChannelError::SelfChannel);
        }
        let own = registry.get(local)?;
        let theirs = registry.get(peer)?;
        let g = &registry.group;
        let shared = g.encode_element(&g.pow(&theirs.public, &own.secret));
        let (lo, hi) = if local < peer {
            (local, peer)
        } else {
            (peer, local)
        };
        let salt = format!("lpos/chn/{lo}|{hi}");
        let hk = Hkdf::<Sha256>::new(Some(salt.as_bytes()), &shared);
        let mut pair_key = [0u8; 32];
        hk.expand(b"pair", &mut pair_key)
            .expect("32 bytes is a valid length");
        let expand = |from: Party, to: Party| {
            let mut k = [0u8; 32];
            hk.expand(direction_info(from, to).as_bytes(), &mut k)
                .expect("32 bytes is a valid length");
            ChaCha20Poly1305::new(Key::from_slice(&k))
        };
        Ok(ChannelEnd {
            local,
            peer,
            mode,
            pair_key,
            send: expand(local, peer),
            recv: expand(peer, local),
            send_ctr: 0,
            recv_ctr: 0,
        })
    }

    pub fn local(&self) -> Party {
        self.local
    }

    pub fn peer(&self) -> Party {
        self.peer
    }

    pub fn mode(&self) -> ChannelMode {
        self.mode
    }

    /// Symmetric pair key shared by both ends.
    pub fn pair_key(&self) -> &[u8; 32] {
        &self.pair_key
    }

    fn nonce(ctr: u64) -> Nonce {
        let mut n = [0u8; 12];
        n[4..].copy_from_slice(&ctr.to_be_bytes());
        Nonce::from(n)
    }

    pub fn seal(&mut self, plaintext: &[u8]) -> Result<Vec<u8>, ChannelError> {
        let ctr = self.send_ctr;
        if ctr == u64::MAX {
            return Err(ChannelError::Exhausted);
        }
        let mut out = Vec::with_capacity(plaintext.len() + FRAME_OVERHEAD);
        out.extend_from_slice(&ctr.to_be_bytes());
        match self.mode {
            ChannelMode::Encrypted => {
                let body = self
                    .send
                    .encrypt(&Self::nonce(ctr), plaintext)
                    .expect("in-memory encryption does not fail");
                out.extend_from_slice(&body);
            }
            ChannelMode::Null => {
                out.extend_from_slice(plaintext);
                out.extend_from_slice(&[0u8; TAG_LEN]);
            }
        }
        self.send_ctr += 1;
        Ok(out)
    }

    pub fn open(&mut self, frame: &[u8]) -> Result<Vec<u8>, ChannelError> {
        if frame.len() < FRAME_OVERHEAD {
            return Err(ChannelError::Truncated);
        }
        let got = u64::from_be_bytes(frame[..NONCE_LEN].try_into().expect("8 bytes"));
        if got != self.recv_ctr {
            return Err(ChannelError::Replay {
                expected: self.recv_ctr,
                got,
            });
        }
        let body = &frame[NONCE_LEN..];
        let plain = match self.mode {
            ChannelMode::Encrypted => self
                .recv
                .decrypt(&Self::nonce(got), body)
                .map_err(|_| ChannelError::Authentication)?,
            ChannelMode::Null => {
                let (msg, tag) = body.split_at(body.len() - TAG_LEN);
                if tag.iter().any(|&b| b != 0) {
                    return Err(ChannelError::Authentication);
                }
                msg.to_vec()
            }
        };
        self.recv_ctr += 1;
        Ok(plain)
    }
}

/// Both ends of the channel between `a` and `b`.
pub fn channel_establish(
    registry: &Registry,
    a: Party,
    b: Party,
    mode: ChannelMode,
) -> Result<(ChannelEnd, ChannelEnd), ChannelError> {
    Ok((
        ChannelEnd::derive(registry, a, b, mode)?,
        ChannelEnd::derive(registry, b, a, mode)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn registry(n: u32) -> Registry {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let group = SchnorrGroup::generate(64, 32, &mut rng).unwrap();
        let mut reg = Registry::new(group);
        reg.register(Party::Fc, &mut rng);
        for i in 1..=n {
            reg.register(Party::Su(i), &mut rng);
        }
        reg
    }

    #[test]
    fn ends_agree_and_pairs_differ() {
        let reg = registry(2);
        let (fc1, su1) =
            channel_establish(&reg, Party::Fc, Party::Su(1), ChannelMode::Encrypted).unwrap();
        let (fc2, _) =
            channel_establish(&reg, Party::Fc, Party::Su(2), ChannelMode::Encrypted).unwrap();
        assert_eq!(fc1.pair_key(), su1.pair_key());
        assert_ne!(fc1.pair_key(), fc2.pair_key());
    }

    #[test]
    fn unknown_identity() {
        let reg = registry(1);
        assert_eq!(
            channel_establish(&reg, Party::Fc, Party::Su(9), ChannelMode::Encrypted).unwrap_err(),
            ChannelError::UnknownIdentity(Party::Su(9))
        );
        assert_eq!(
            channel_establish(&reg, Party::Fc, Party::Fc, ChannelMode::Encrypted).unwrap_err(),
            ChannelError::SelfChannel
        );
    }

    #[test]
    fn round_trip_both_directions() {
        let reg = registry(1);
        let (mut fc, mut su) =
            channel_establish(&reg, Party::Fc, Party::Su(1), ChannelMode::Encrypted).unwrap();
        for msg in [&b""[..], b"hello", &[0xAB; 300]] {
            let f = su.seal(msg).unwrap();
            assert_eq!(f.len(), msg.len() + FRAME_OVERHEAD);
            assert_eq!(fc.open(&f).unwrap(), msg);
            let b = fc.seal(msg).unwrap();
            assert_eq!(su.open(&b).unwrap(), msg);
        }
    }

    #[test]
    fn tamper_replay_and_reflection_rejected() {
        let reg = registry(1);
        let (mut fc, mut su) =
            channel_establish(&reg, Party::Fc, Party::Su(1), ChannelMode::Encrypted).unwrap();
        let frame = su.seal(b"report").unwrap();
        for bit in 0..(frame.len() - NONCE_LEN) * 8 {
            let mut bad = frame.clone();
            bad[NONCE_LEN + bit / 8] ^= 1 << (bit % 8);
            assert_eq!(fc.clone().open(&bad), Err(ChannelError::Authentication));
        }
        assert!(fc.open(&frame).is_ok());
        assert_eq!(
            fc.open(&frame),
            Err(ChannelError::Replay {
                expected: 1,
                got: 0
            })
        );
        // A frame sent su->fc cannot be reflected back to su.
        let mut su2 = su.clone();
        let f2 = su.seal(b"x").unwrap();
        let mut forged = f2.clone();
        forged[..NONCE_LEN].copy_from_slice(&0u64.to_be_bytes());
        assert_eq!(su2.open(&forged), Err(ChannelError::Authentication));
        assert_eq!(fc.open(&frame[..10]), Err(ChannelError::Truncated));
    }

    #[test]
    fn cross_pair_isolation_exhaustive() {
        let n = 16;
        let reg = registry(n);
        for i in 1..=n {
            let (_, mut su_i) =
                channel_establish(&reg, Party::Fc, Party::Su(i), ChannelMode::Encrypted).unwrap();
            let frame = su_i.seal(b"secret reading").unwrap();
            for j in 1..=n {
                let (mut fc_j, _) =
                    channel_establish(&reg, Party::Fc, Party::Su(j), ChannelMode::Encrypted)
                        .unwrap();
                assert_eq!(fc_j.open(&frame).is_ok(), i == j, "i={i} j={j}");
                // Another user's end, receiving as if it were the FC side.
                if i != j {
                    let (mut su_j_as_peer, _) =
                        channel_establish(&reg, Party::Su(j), Party::Su(i), ChannelMode::Encrypted)
                            .unwrap();
                    assert!(su_j_as_peer.open(&frame).is_err());
                }
            }
        }
    }

    #[test]
    fn null_mode_is_transparent() {
        let reg = registry(1);
        let (mut fc, mut su) =
            channel_establish(&reg, Party::Fc, Party::Su(1), ChannelMode::Null).unwrap();
        let f = su.seal(b"plain").unwrap();
        assert_eq!(&f[NONCE_LEN..NONCE_LEN + 5], b"plain");
        assert_eq!(fc.open(&f).unwrap(), b"plain");
    }
}
