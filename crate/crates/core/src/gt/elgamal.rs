//! Multiplicative ElGamal over a [`SchnorrGroup`].

use num_bigint::BigUint;
use num_traits::One;
use rand::RngCore;

use super::GtError;
use crate::group::{GroupSetupError, SchnorrGroup};

/// Group plus the comparison bit-length `l`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ElGamalParams {
    pub group: SchnorrGroup,
    pub l: u32,
}

impl ElGamalParams {
    pub fn new(group: SchnorrGroup, l: u32) -> Result<Self, GtError> {
        if l == 0 || l > 63 {
            return Err(GtError::Params(format!(
                "comparison length {l} not in 1..=63"
            )));
        }
        Ok(ElGamalParams { group, l })
    }

    /// Wire size of one ciphertext in bytes.
    pub fn ciphertext_len(&self) -> usize {
        2 * self.group.element_len()
    }
}

/// Generates `(p, q, alpha)` with the requested bit sizes.
pub fn elgamal_setup<R: RngCore + ?Sized>(
    p_bits: u64,
    q_bits: u64,
    rng: &mut R,
) -> Result<SchnorrGroup, GroupSetupError> {
    SchnorrGroup::generate(p_bits, q_bits, rng)
}

#[derive(Clone, PartialEq, Eq)]
pub struct ElGamalKeyPair {
    sk: BigUint,
    pk: BigUint,
}

impl std::fmt::Debug for ElGamalKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ElGamalKeyPair")
            .field("pk", &self.pk)
            .finish_non_exhaustive()
    }
}

impl ElGamalKeyPair {
    pub fn generate<R: RngCore + ?Sized>(group: &SchnorrGroup, rng: &mut R) -> Self {
        let sk = group.random_scalar(rng);
        let pk = group.exp_g(&sk);
        ElGamalKeyPair { sk, pk }
    }

    pub fn public(&self) -> &BigUint {
        &self.pk
    }

    pub(crate) fn secret(&self) -> &BigUint {
        &self.sk
    }

    /// `PK == g^sk` and `PK` is in the subgroup.
    pub fn is_valid_for(&self, group: &SchnorrGroup) -> bool {
        group.contains(&self.pk) && group.exp_g(&self.sk) == self.pk
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    pub a: BigUint,
    pub b: BigUint,
}

pub fn encrypt<R: RngCore + ?Sized>(
    group: &SchnorrGroup,
    pk: &BigUint,
    m: &BigUint,
    rng: &mut R,
) -> Ciphertext {
    let k = group.random_scalar(rng);
    Ciphertext {
        a: group.exp_g(&k),
        b: group.mul(m, &group.pow(pk, &k)),
    }
}

pub fn decrypt(group: &SchnorrGroup, sk: &BigUint, c: &Ciphertext) -> BigUint {
    // a^(q - sk) = a^(-sk) because a has order q.
    let inv = group.pow(&c.a, &(group.q() - sk));
    group.mul(&c.b, &inv)
}

/// Decrypts to the identity element, i.e. the "match" marker.
pub fn is_identity(group: &SchnorrGroup, sk: &BigUint, c: &Ciphertext) -> bool {
    decrypt(group, sk, c).is_one()
}

/// Component-wise product: encrypts the product of the plaintexts.
pub fn mul(group: &SchnorrGroup, x: &Ciphertext, y: &Ciphertext) -> Ciphertext {
    Ciphertext {
        a: group.mul(&x.a, &y.a),
        b: group.mul(&x.b, &y.b),
    }
}

/// Raises both components to `s`: encrypts `m^s`.
pub fn pow(group: &SchnorrGroup, c: &Ciphertext, s: &BigUint) -> Ciphertext {
    Ciphertext {
        a: group.pow(&c.a, s),
        b: group.pow(&c.b, s),
    }
}

/// Multiplies in a fresh encryption of the identity.
pub fn rerandomize<R: RngCore + ?Sized>(
    group: &SchnorrGroup,
    pk: &BigUint,
    c: &Ciphertext,
    rng: &mut R,
) -> Ciphertext {
    let one = encrypt(group, pk, &BigUint::one(), rng);
    mul(group, c, &one)
}

pub fn encode_ciphertext(group: &SchnorrGroup, c: &Ciphertext, out: &mut Vec<u8>) {
    out.extend_from_slice(&group.encode_element(&c.a));
    out.extend_from_slice(&group.encode_element(&c.b));
}

/// Parses one ciphertext; range-checked only.
pub fn decode_ciphertext(group: &SchnorrGroup, bytes: &[u8]) -> Option<Ciphertext> {
    let w = group.element_len();
    if bytes.len() != 2 * w {
        return None;
    }
    Some(Ciphertext {
        a: group.decode_element(&bytes[..w])?,
        b: group.decode_element(&bytes[w..])?,
    })
}
