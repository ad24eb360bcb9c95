//! Order-preserving encryption of padded RSS reports.
//!
//! The cipher is a keyed random order-preserving function built by recursive
//! range halving: at each step the range interval is split at its midpoint and
//! the number of domain points that land in the lower half is drawn from a
//! hypergeometric distribution whose coins come from a PRF over the current
//! interval pair. Recursion follows the half that holds the plaintext until a
//! single domain point remains, which is then placed pseudorandomly inside the
//! remaining range interval.
//!
//! PRF: HMAC-SHA256 keyed by the [`OpeKey`], evaluated over
//! `tag || dom_lo || dom_hi || rng_lo || rng_hi` (each bound a 16-byte
//! big-endian integer). The 32-byte output seeds a ChaCha20 stream that
//! supplies every random draw of that step.
//!
//! Splits with at most [`EXACT_HGD_LIMIT`] domain points are sampled exactly;
//! larger ones use a normal approximation with finite-population correction,
//! clamped to the feasible support, so the map is always a strict monotone
//! injection.

use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::Sha256;
use thiserror::Error;

/// Domain points above which the split count uses the normal approximation.
pub const EXACT_HGD_LIMIT: u128 = 64;

const TAG_SPLIT: u8 = 0x01;
const TAG_LEAF: u8 = 0x02;
const MAX_CIPHERTEXT_BITS: u32 = 126;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OpeError {
    #[error("invalid OPE parameters: {0}")]
    Params(String),
    #[error("plaintext {0} outside the {1}-bit domain")]
    PlaintextRange(u128, u32),
    #[error("ciphertext is not in the image of this key")]
    Decode,
}

/// Plaintext width `d` and ciphertext width `cw`, both in bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OpeParams {
    plaintext_bits: u32,
    ciphertext_bits: u32,
}

impl OpeParams {
    pub fn new(plaintext_bits: u32, ciphertext_bits: u32) -> Result<Self, OpeError> {
        if plaintext_bits == 0 || ciphertext_bits <= plaintext_bits {
            return Err(OpeError::Params(format!(
                "need 0 < d < cw, got d = {plaintext_bits}, cw = {ciphertext_bits}"
            )));
        }
        if ciphertext_bits > MAX_CIPHERTEXT_BITS {
            return Err(OpeError::Params(format!(
                "cw = {ciphertext_bits} exceeds {MAX_CIPHERTEXT_BITS}"
            )));
        }
        Ok(OpeParams {
            plaintext_bits,
            ciphertext_bits,
        })
    }

    /// Sizing for `rss_bits`-bit reports: `d = 2*gamma + 8`, `cw = d + 24`.
    /// For 16-bit RSS this is `d = 40`, `cw = 64`.
    pub fn for_rss_bits(rss_bits: u32) -> Result<Self, OpeError> {
        let d = 2 * rss_bits + 8;
        let params = OpeParams::new(d, d + 24)?;
        params.check_rss_bits(rss_bits)?;
        Ok(params)
    }

    /// The padding must cover at least the top half of the plaintext block.
    pub fn check_rss_bits(&self, rss_bits: u32) -> Result<(), OpeError> {
        if rss_bits == 0 || self.plaintext_bits < 2 * rss_bits + 1 {
            return Err(OpeError::Params(format!(
                "d = {} must be at least 2*gamma + 1 = {}",
                self.plaintext_bits,
                2 * rss_bits + 1
            )));
        }
        Ok(())
    }

    pub fn plaintext_bits(&self) -> u32 {
        self.plaintext_bits
    }

    pub fn ciphertext_bits(&self) -> u32 {
        self.ciphertext_bits
    }

    /// Padding length `d - gamma - 1` for `rss_bits`-bit reports.
    pub fn padding_bits(&self, rss_bits: u32) -> u32 {
        self.plaintext_bits - rss_bits - 1
    }

    fn domain_max(&self) -> u128 {
        (1u128 << self.plaintext_bits) - 1
    }

    fn range_max(&self) -> u128 {
        (1u128 << self.ciphertext_bits) - 1
    }

    /// Wire width of a ciphertext, `ceil(cw / 8)` bytes.
    pub fn ciphertext_len(&self) -> usize {
        self.ciphertext_bits.div_ceil(8) as usize
    }
}

/// Secret key material for the order-preserving cipher.
#[derive(Clone, PartialEq, Eq)]
pub struct OpeKey([u8; 32]);

impl std::fmt::Debug for OpeKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("OpeKey(..)")
    }
}

impl OpeKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        OpeKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

/// HKDF-SHA256 over the group key with `context_label` as the info string.
pub fn derive_ope_key(group_key: &[u8], context_label: &[u8]) -> Result<OpeKey, OpeError> {
    if group_key.is_empty() {
        return Err(OpeError::Params("empty group key".into()));
    }
    let hk = Hkdf::<Sha256>::new(Some(b"lpos/ope-key"), group_key);
    let mut out = [0u8; 32];
    hk.expand(context_label, &mut out)
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    Ok(OpeKey(out))
}

/// The public constant prefix `D` placed above every RSS value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Padding {
    bits: u128,
    len: u32,
}

impl Padding {
    pub fn new(bits: u128, len: u32) -> Result<Self, OpeError> {
        if len > 126 || bits >> len != 0 {
            return Err(OpeError::Params(format!(
                "padding value does not fit in {len} bits"
            )));
        }
        Ok(Padding { bits, len })
    }

    pub fn random<R: Rng + ?Sized>(len: u32, rng: &mut R) -> Result<Self, OpeError> {
        let mask = if len == 0 {
            0
        } else {
            u128::MAX >> (128 - len)
        };
        Padding::new(rng.gen::<u128>() & mask, len)
    }

    pub fn bits(&self) -> u128 {
        self.bits
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Builds the `d`-bit plaintext `0 || D || r`.
pub fn encode_report(
    padding: Padding,
    rss: u64,
    rss_bits: u32,
    params: &OpeParams,
) -> Result<u128, OpeError> {
    if padding.len != params.padding_bits(rss_bits) {
        return Err(OpeError::Params(format!(
            "padding has {} bits, expected d - gamma - 1 = {}",
            padding.len,
            params.padding_bits(rss_bits)
        )));
    }
    if rss_bits >= 64 || rss >> rss_bits != 0 {
        return Err(OpeError::PlaintextRange(rss as u128, rss_bits));
    }
    Ok((padding.bits << rss_bits) | rss as u128)
}

type HmacSha256 = Hmac<Sha256>;

fn step_rng(key: &OpeKey, tag: u8, dom: (u128, u128), rng: (u128, u128)) -> ChaCha20Rng {
    let mut mac = HmacSha256::new_from_slice(&key.0).expect("HMAC accepts any key length");
    mac.update(&[tag]);
    for bound in [dom.0, dom.1, rng.0, rng.1] {
        mac.update(&bound.to_be_bytes());
    }
    let seed: [u8; 32] = mac.finalize().into_bytes().into();
    ChaCha20Rng::from_seed(seed)
}

/// Number of the `marked` items that fall among the first `draws` of a
/// random arrangement of `population` items.
fn sample_hypergeometric<R: Rng>(rng: &mut R, population: u128, marked: u128, draws: u128) -> u128 {
    let lo = marked.saturating_sub(population - draws);
    let hi = marked.min(draws);
    if lo == hi {
        return lo;
    }
    if marked <= EXACT_HGD_LIMIT {
        // Place marked items one by one into the remaining free slots.
        let mut hits = 0u128;
        for i in 0..marked {
            let slot = rng.gen_range(0..population - i);
            if slot < draws - hits {
                hits += 1;
            }
        }
        return hits;
    }
    let n = population as f64;
    let k = marked as f64;
    let frac = draws as f64 / n;
    let mean = k * frac;
    let var = k * frac * (1.0 - frac) * (n - k) / (n - 1.0);
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    let x = (mean + var.max(0.0).sqrt() * z).round();
    let x = if x <= 0.0 { 0 } else { x as u128 };
    x.clamp(lo, hi)
}

struct Split {
    range_mid: u128,
    domain_cut: u128,
}

fn split(key: &OpeKey, dom: (u128, u128), rng_iv: (u128, u128)) -> Split {
    let domain_size = dom.1 - dom.0 + 1;
    let range_size = rng_iv.1 - rng_iv.0 + 1;
    let lower_size = range_size - range_size / 2;
    let mut coins = step_rng(key, TAG_SPLIT, dom, rng_iv);
    let in_lower = sample_hypergeometric(&mut coins, range_size, domain_size, lower_size);
    Split {
        range_mid: rng_iv.0 + lower_size - 1,
        domain_cut: dom.0 + in_lower,
    }
}

fn place_leaf(key: &OpeKey, point: u128, rng_iv: (u128, u128)) -> u128 {
    let mut coins = step_rng(key, TAG_LEAF, (point, point), rng_iv);
    rng_iv.0 + coins.gen_range(0..=rng_iv.1 - rng_iv.0)
}

/// Order-preserving ciphertext.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OpeCiphertext(pub u128);

impl OpeCiphertext {
    /// Unsigned big-endian, `ceil(cw / 8)` bytes.
    pub fn to_bytes(&self, params: &OpeParams) -> Vec<u8> {
        let full = self.0.to_be_bytes();
        full[16 - params.ciphertext_len()..].to_vec()
    }

    pub fn from_bytes(bytes: &[u8], params: &OpeParams) -> Result<Self, OpeError> {
        if bytes.len() != params.ciphertext_len() {
            return Err(OpeError::Decode);
        }
        let mut full = [0u8; 16];
        full[16 - bytes.len()..].copy_from_slice(bytes);
        let value = u128::from_be_bytes(full);
        if value > params.range_max() {
            return Err(OpeError::Decode);
        }
        Ok(OpeCiphertext(value))
    }
}

pub fn ope_encrypt(key: &OpeKey, m: u128, params: &OpeParams) -> Result<OpeCiphertext, OpeError> {
    if m > params.domain_max() {
        return Err(OpeError::PlaintextRange(m, params.plaintext_bits));
    }
    let mut dom = (0u128, params.domain_max());
    let mut rng_iv = (0u128, params.range_max());
    while dom.0 < dom.1 {
        let s = split(key, dom, rng_iv);
        if m < s.domain_cut {
            dom.1 = s.domain_cut - 1;
            rng_iv.1 = s.range_mid;
        } else {
            dom.0 = s.domain_cut;
            rng_iv.0 = s.range_mid + 1;
        }
    }
    Ok(OpeCiphertext(place_leaf(key, dom.0, rng_iv)))
}

pub fn ope_decrypt(key: &OpeKey, c: OpeCiphertext, params: &OpeParams) -> Result<u128, OpeError> {
    if c.0 > params.range_max() {
        return Err(OpeError::Decode);
    }
    let mut dom = (0u128, params.domain_max());
    let mut rng_iv = (0u128, params.range_max());
    while dom.0 < dom.1 {
        let s = split(key, dom, rng_iv);
        if c.0 <= s.range_mid {
            if s.domain_cut == dom.0 {
                return Err(OpeError::Decode);
            }
            dom.1 = s.domain_cut - 1;
            rng_iv.1 = s.range_mid;
        } else {
            if s.domain_cut > dom.1 {
                return Err(OpeError::Decode);
            }
            dom.0 = s.domain_cut;
            rng_iv.0 = s.range_mid + 1;
        }
    }
    if place_leaf(key, dom.0, rng_iv) == c.0 {
        Ok(dom.0)
    } else {
        Err(OpeError::Decode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, RngCore};

    fn key(seed: u64) -> OpeKey {
        let mut bytes = [0u8; 32];
        ChaCha20Rng::seed_from_u64(seed).fill_bytes(&mut bytes);
        OpeKey(bytes)
    }

    #[test]
    fn key_derivation_is_deterministic_and_separated() {
        let k = b"group key material";
        let a = derive_ope_key(k, b"ope-v1").unwrap();
        assert_eq!(a, derive_ope_key(k, b"ope-v1").unwrap());
        assert_ne!(a, derive_ope_key(k, b"ope-v2").unwrap());
        assert!(derive_ope_key(b"", b"ope-v1").is_err());
    }

    #[test]
    fn distinct_group_keys_give_distinct_ope_keys() {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..1000 {
            let mut gk = [0u8; 32];
            rng.fill_bytes(&mut gk);
            assert!(seen.insert(*derive_ope_key(&gk, b"ope-v1").unwrap().as_bytes()));
        }
    }

    #[test]
    fn report_encoding_matches_bit_concatenation() {
        let params = OpeParams::new(9, 16).unwrap();
        let pad = Padding::new(0b1010, 4).unwrap();
        // Oracle: build the bit string "0" + "1010" + "0110" and parse it.
        let bits = format!("0{:04b}{:04b}", 0b1010, 0b0110);
        let oracle = u128::from_str_radix(&bits, 2).unwrap();
        assert_eq!(oracle, 166);
        assert_eq!(encode_report(pad, 0b0110, 4, &params).unwrap(), 166);
        assert_eq!(encode_report(pad, 0, 4, &params).unwrap(), 160);
        assert!(
            encode_report(pad, 3, 4, &params).unwrap() < encode_report(pad, 5, 4, &params).unwrap()
        );
    }

    #[test]
    fn report_encoding_rejects_bad_inputs() {
        let params = OpeParams::new(9, 16).unwrap();
        let pad = Padding::new(0b1010, 4).unwrap();
        assert!(encode_report(pad, 16, 4, &params).is_err());
        let short = Padding::new(0b10, 3).unwrap();
        assert!(encode_report(short, 1, 4, &params).is_err());
        assert!(Padding::new(0b10000, 4).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(OpeParams::new(8, 8).is_err());
        assert!(OpeParams::new(40, 130).is_err());
        let p = OpeParams::for_rss_bits(16).unwrap();
        assert_eq!((p.plaintext_bits(), p.ciphertext_bits()), (40, 64));
        assert_eq!(p.padding_bits(16), 23);
        assert!(OpeParams::new(20, 40).unwrap().check_rss_bits(10).is_err());
    }

    #[test]
    fn basic_order_and_determinism() {
        let params = OpeParams::new(16, 32).unwrap();
        let k = key(1);
        let c5 = ope_encrypt(&k, 5, &params).unwrap();
        let c9 = ope_encrypt(&k, 9, &params).unwrap();
        assert!(c5 < c9);
        assert_eq!(ope_encrypt(&k, 7, &params), ope_encrypt(&k, 7, &params));
        assert!(ope_encrypt(&k, 1 << 16, &params).is_err());
    }

    #[test]
    fn exhaustive_d8_is_strict_monotone_injection() {
        let params = OpeParams::new(8, 16).unwrap();
        for seed in 0..10 {
            let k = key(seed);
            let cts: Vec<_> = (0..256u128)
                .map(|m| ope_encrypt(&k, m, &params).unwrap())
                .collect();
            assert!(cts.windows(2).all(|w| w[0] < w[1]), "seed {seed}");
            for (m, c) in cts.iter().enumerate() {
                assert_eq!(ope_decrypt(&k, *c, &params).unwrap(), m as u128);
            }
        }
    }

    #[test]
    fn boundary_round_trips_at_production_size() {
        let params = OpeParams::for_rss_bits(16).unwrap();
        let k = key(5);
        for m in [0, (1u128 << 40) - 1] {
            let c = ope_encrypt(&k, m, &params).unwrap();
            assert_eq!(ope_decrypt(&k, c, &params).unwrap(), m);
        }
    }

    #[test]
    fn decrypt_rejects_values_outside_image() {
        let params = OpeParams::new(4, 12).unwrap();
        let k = key(3);
        let image: std::collections::HashSet<u128> = (0..16u128)
            .map(|m| ope_encrypt(&k, m, &params).unwrap().0)
            .collect();
        let c = (0..4096u128).find(|c| !image.contains(c)).unwrap();
        assert_eq!(
            ope_decrypt(&k, OpeCiphertext(c), &params),
            Err(OpeError::Decode)
        );
        assert_eq!(
            ope_decrypt(&k, OpeCiphertext(1 << 12), &params),
            Err(OpeError::Decode)
        );
    }

    #[test]
    fn ciphertexts_depend_on_key_and_differ_from_plaintext() {
        let params = OpeParams::for_rss_bits(16).unwrap();
        let (k1, k2) = (key(10), key(11));
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let mut agree = 0;
        let mut identity = 0;
        for _ in 0..1000 {
            let m = rng.gen_range(0..1u128 << 40);
            let a = ope_encrypt(&k1, m, &params).unwrap();
            agree += (a == ope_encrypt(&k2, m, &params).unwrap()) as u32;
            identity += (a.0 == m) as u32;
        }
        assert!(agree < 10, "{agree} agreements");
        assert!(identity < 10, "{identity} pass-throughs");
    }

    #[test]
    fn exact_sampler_matches_hypergeometric_mean() {
        // E[X] = marked * draws / population.
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let trials = 20_000;
        let total: u128 = (0..trials)
            .map(|_| sample_hypergeometric(&mut rng, 100, 20, 30))
            .sum();
        let mean = total as f64 / trials as f64;
        assert!((mean - 6.0).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn wire_encoding_is_fixed_width() {
        let params = OpeParams::for_rss_bits(16).unwrap();
        let c = OpeCiphertext(0x0102);
        let bytes = c.to_bytes(&params);
        assert_eq!(bytes, vec![0, 0, 0, 0, 0, 0, 1, 2]);
        assert_eq!(OpeCiphertext::from_bytes(&bytes, &params).unwrap(), c);
        assert!(OpeCiphertext::from_bytes(&bytes[1..], &params).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn order_is_preserved_at_production_size(seed in any::<u64>(), a in 0u128..1 << 40, b in 0u128..1 << 40) {
            let params = OpeParams::for_rss_bits(16).unwrap();
            let k = key(seed);
            let ca = ope_encrypt(&k, a, &params).unwrap();
            let cb = ope_encrypt(&k, b, &params).unwrap();
            prop_assert_eq!(a.cmp(&b), ca.cmp(&cb));
            prop_assert_eq!(ope_decrypt(&k, ca, &params).unwrap(), a);
        }
    }
}
