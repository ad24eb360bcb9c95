//! Prime-order subgroups of `Z_p^*` (Schnorr groups).
//!
//! Both the comparison protocol and the group key tree work in a subgroup
//! `G = <g>` of order `q` where `q | p - 1`. Every modular exponentiation goes
//! through [`SchnorrGroup::pow`] so that cost metering sees it.

use std::cell::Cell;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::RngCore;
use thiserror::Error;

thread_local! {
    static MODEXP_COUNT: Cell<u64> = const { Cell::new(0) };
}

/// Number of modular exponentiations performed on the current thread.
pub fn modexp_count() -> u64 {
    MODEXP_COUNT.with(Cell::get)
}

fn count_modexp() {
    MODEXP_COUNT.with(|c| c.set(c.get() + 1));
}

/// Square-and-multiply in `u128` for moduli of at most 64 bits; the test
/// profile spends most of its time here.
fn modpow_u64(base: u64, mut exp: u64, p: u64) -> u64 {
    let p = p as u128;
    let mut b = base as u128 % p;
    let mut acc = 1 % p;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * b % p;
        }
        b = b * b % p;
        exp >>= 1;
    }
    acc as u64
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroupSetupError {
    #[error("invalid group sizes: |p| = {p_bits}, |q| = {q_bits}")]
    InvalidSizes { p_bits: u64, q_bits: u64 },
    #[error("no suitable prime found after {0} candidates")]
    PrimeSearchExhausted(usize),
    #[error("group parameters fail validation: {0}")]
    Invalid(&'static str),
}

const SMALL_PRIMES: [u32; 53] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193,
    197, 199, 211, 223, 227, 229, 233, 239, 241, 251,
];

const MILLER_RABIN_ROUNDS: usize = 40;
const MAX_PRIME_CANDIDATES: usize = 200_000;

/// Uniform integer in `[0, bound)`. `bound` must be non-zero.
pub fn random_below<R: RngCore + ?Sized>(rng: &mut R, bound: &BigUint) -> BigUint {
    assert!(!bound.is_zero(), "random_below: empty range");
    let bits = bound.bits();
    let nbytes = bits.div_ceil(8) as usize;
    let excess = (nbytes as u64) * 8 - bits;
    let mut buf = vec![0u8; nbytes];
    loop {
        rng.fill_bytes(&mut buf);
        buf[0] &= 0xff >> excess;
        let candidate = BigUint::from_bytes_be(&buf);
        if &candidate < bound {
            return candidate;
        }
    }
}

fn random_bits<R: RngCore + ?Sized>(rng: &mut R, bits: u64) -> BigUint {
    let top = BigUint::one() << (bits - 1);
    top.clone() + random_below(rng, &top)
}

/// Miller-Rabin with random bases, after trial division by small primes.
pub fn is_probable_prime<R: RngCore + ?Sized>(n: &BigUint, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    for &sp in SMALL_PRIMES.iter() {
        let sp = BigUint::from(sp);
        if n == &sp {
            return true;
        }
        if (n % &sp).is_zero() {
            return false;
        }
    }
    if n.is_even() {
        return n == &two;
    }
    let n_minus_one = n - 1u32;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    let base_bound = n - 3u32;
    'witness: for _ in 0..MILLER_RABIN_ROUNDS {
        let a = random_below(rng, &base_bound) + 2u32;
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_one {
            continue;
        }
        for _ in 1..s {
            x = (&x * &x) % n;
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Random prime with exactly `bits` bits.
pub fn random_prime<R: RngCore + ?Sized>(
    bits: u64,
    rng: &mut R,
) -> Result<BigUint, GroupSetupError> {
    for _ in 0..MAX_PRIME_CANDIDATES {
        let candidate = random_bits(rng, bits) | BigUint::one();
        if is_probable_prime(&candidate, rng) {
            return Ok(candidate);
        }
    }
    Err(GroupSetupError::PrimeSearchExhausted(MAX_PRIME_CANDIDATES))
}

/// The order-`q` subgroup of `Z_p^*` generated by `g`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SchnorrGroup {
    p: BigUint,
    q: BigUint,
    g: BigUint,
}

// 1024-bit MODP group with 160-bit prime order subgroup (RFC 5114, section 2.1).
const RFC5114_P: &str = "B10B8F96A080E01DDE92DE5EAE5D54EC52C99FBCFB06A3C69A6A9DCA52D23B61\
6073E28675A23D189838EF1E2EE652C013ECB4AEA906112324975C3CD49B83BF\
ACCBDD7D90C4BD7098488E9C219A73724EFFD6FAE5644738FAA31A4FF55BCCC0\
A151AF5F0DC8B4BD45BF37DF365C1A65E68CFDA76D4DA708DF1FB2BC2E4A4371";
const RFC5114_G: &str = "A4D1CBD5C3FD34126765A442EFB99905F8104DD258AC507FD6406CFF14266D31\
266FEA1E5C41564B777E690F5504F213160217B4B01B886A5E91547F9E2749F4\
D7FBD7D3B9A92EE1909D0D2263F80A76A6A24C087A091F531DBF0A0169B6A28A\
D662A4D18E73AFA32D779D5918D08BC8858F4DCEF97C2A24855E6EEB22B3B2E5";
const RFC5114_Q: &str = "F518AA8781A8DF278ABA4E7D64B7CB9D49462353";

fn hex(s: &str) -> BigUint {
    BigUint::parse_bytes(s.as_bytes(), 16).expect("valid hex constant")
}

impl SchnorrGroup {
    /// Builds a group from explicit parameters, checking the subgroup structure.
    pub fn new(p: BigUint, q: BigUint, g: BigUint) -> Result<Self, GroupSetupError> {
        let group = SchnorrGroup { p, q, g };
        group.validate()?;
        Ok(group)
    }

    /// The |p| = 1024, |q| = 160 group used by the `nist` profile.
    pub fn rfc5114_1024_160() -> Self {
        SchnorrGroup {
            p: hex(RFC5114_P),
            q: hex(RFC5114_Q),
            g: hex(RFC5114_G),
        }
    }

    /// Generates a fresh group: a `q_bits` prime `q`, then `p = k*q + 1` with
    /// exactly `p_bits` bits, then a generator of the order-`q` subgroup.
    pub fn generate<R: RngCore + ?Sized>(
        p_bits: u64,
        q_bits: u64,
        rng: &mut R,
    ) -> Result<Self, GroupSetupError> {
        if q_bits < 8 || q_bits >= p_bits || p_bits > 4096 {
            return Err(GroupSetupError::InvalidSizes { p_bits, q_bits });
        }
        let q = random_prime(q_bits, rng)?;
        let p_min = BigUint::one() << (p_bits - 1);
        let p_max = (BigUint::one() << p_bits) - 1u32;
        let k_min = (&p_min - 1u32).div_ceil(&q);
        let k_max = (&p_max - 1u32) / &q;
        if k_max < k_min {
            return Err(GroupSetupError::InvalidSizes { p_bits, q_bits });
        }
        let span = &k_max - &k_min + 1u32;
        for _ in 0..MAX_PRIME_CANDIDATES {
            let mut k = &k_min + random_below(rng, &span);
            if k.is_odd() {
                k += 1u32;
            }
            let p = &k * &q + 1u32;
            if p.bits() != p_bits || !is_probable_prime(&p, rng) {
                continue;
            }
            let cofactor = (&p - 1u32) / &q;
            loop {
                let h = random_below(rng, &(&p - 3u32)) + 2u32;
                let g = h.modpow(&cofactor, &p);
                if !g.is_one() {
                    return SchnorrGroup::new(p, q, g);
                }
            }
        }
        Err(GroupSetupError::PrimeSearchExhausted(MAX_PRIME_CANDIDATES))
    }

    pub fn validate(&self) -> Result<(), GroupSetupError> {
        let one = BigUint::one();
        if self.q <= one || self.p <= self.q {
            return Err(GroupSetupError::Invalid("need p > q > 1"));
        }
        if !((&self.p - 1u32) % &self.q).is_zero() {
            return Err(GroupSetupError::Invalid("q does not divide p - 1"));
        }
        if self.g <= one || self.g >= self.p {
            return Err(GroupSetupError::Invalid("generator out of range"));
        }
        if !self.g.modpow(&self.q, &self.p).is_one() {
            return Err(GroupSetupError::Invalid(
                "generator order does not divide q",
            ));
        }
        Ok(())
    }

    pub fn p(&self) -> &BigUint {
        &self.p
    }

    pub fn q(&self) -> &BigUint {
        &self.q
    }

    pub fn generator(&self) -> &BigUint {
        &self.g
    }

    pub fn p_bits(&self) -> u64 {
        self.p.bits()
    }

    pub fn q_bits(&self) -> u64 {
        self.q.bits()
    }

    /// `base^exp mod p`, metered.
    pub fn pow(&self, base: &BigUint, exp: &BigUint) -> BigUint {
        count_modexp();
        match (
            u64::try_from(&self.p),
            u64::try_from(base),
            u64::try_from(exp),
        ) {
            (Ok(p), Ok(b), Ok(e)) => BigUint::from(modpow_u64(b, e, p)),
            _ => base.modpow(exp, &self.p),
        }
    }

    /// `g^exp mod p`, metered.
    pub fn exp_g(&self, exp: &BigUint) -> BigUint {
        self.pow(&self.g, exp)
    }

    pub fn mul(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a * b) % &self.p
    }

    /// Membership in the order-`q` subgroup (one metered exponentiation).
    pub fn contains(&self, e: &BigUint) -> bool {
        !e.is_zero() && e < &self.p && self.pow(e, &self.q).is_one()
    }

    /// Uniform exponent in `[1, q - 1]`.
    pub fn random_scalar<R: RngCore + ?Sized>(&self, rng: &mut R) -> BigUint {
        random_below(rng, &(&self.q - 1u32)) + 1u32
    }

    /// Uniform non-identity element of the subgroup.
    pub fn random_element<R: RngCore + ?Sized>(&self, rng: &mut R) -> BigUint {
        let s = self.random_scalar(rng);
        self.exp_g(&s)
    }

    /// Maps arbitrary bytes (e.g. a hash output) to an exponent in `[1, q - 1]`.
    pub fn scalar_from_bytes(&self, bytes: &[u8]) -> BigUint {
        BigUint::from_bytes_be(bytes) % (&self.q - 1u32) + 1u32
    }

    /// Fixed encoding width of group elements, `ceil(|p| / 8)` bytes.
    pub fn element_len(&self) -> usize {
        self.p.bits().div_ceil(8) as usize
    }

    /// Unsigned big-endian, left-padded to [`Self::element_len`].
    pub fn encode_element(&self, e: &BigUint) -> Vec<u8> {
        let width = self.element_len();
        let raw = e.to_bytes_be();
        let mut out = vec![0u8; width.saturating_sub(raw.len())];
        out.extend_from_slice(&raw);
        out
    }

    /// Parses a fixed-width element; range only, subgroup membership is the caller's call.
    pub fn decode_element(&self, bytes: &[u8]) -> Option<BigUint> {
        if bytes.len() != self.element_len() {
            return None;
        }
        let e = BigUint::from_bytes_be(bytes);
        (!e.is_zero() && e < self.p).then_some(e)
    }
}
