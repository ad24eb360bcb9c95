//! 0-encodings and 1-encodings: prefix sets whose intersection decides `x > y`.
//!
//! Bits are indexed from the most significant position `l` down to `1`.

use std::fmt;

use super::GtError;

/// A bit string of `len <= 63` bits, most significant bit first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitString {
    value: u64,
    len: u32,
}

impl BitString {
    pub fn new(value: u64, len: u32) -> Self {
        debug_assert!(len <= 63 && value >> len == 0);
        BitString { value, len }
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    /// Bit `k` counted from the left, `k = 0` being the first.
    pub fn bit_from_left(&self, k: u32) -> bool {
        (self.value >> (self.len - 1 - k)) & 1 == 1
    }

    /// Same string with the last bit flipped.
    pub fn flip_last(&self) -> Self {
        BitString::new(self.value ^ 1, self.len)
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in 0..self.len {
            f.write_str(if self.bit_from_left(k) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

fn check_range(v: u64, l: u32) -> Result<(), GtError> {
    if l == 0 || l > 63 || v >> l != 0 {
        return Err(GtError::InputRange { value: v, bits: l });
    }
    Ok(())
}

/// `{ y_l .. y_{i+1} 1 : y_i = 0 }`, shortest string first.
pub fn encoding_zero(y: u64, l: u32) -> Result<Vec<BitString>, GtError> {
    check_range(y, l)?;
    Ok((1..=l)
        .rev()
        .filter(|&i| (y >> (i - 1)) & 1 == 0)
        .map(|i| {
            let prefix = y >> i;
            BitString::new((prefix << 1) | 1, l - i + 1)
        })
        .collect())
}

/// `{ x_l .. x_i : x_i = 1 }`, shortest string first.
pub fn encoding_one(x: u64, l: u32) -> Result<Vec<BitString>, GtError> {
    check_range(x, l)?;
    Ok((1..=l)
        .rev()
        .filter(|&i| (x >> (i - 1)) & 1 == 1)
        .map(|i| BitString::new(x >> (i - 1), l - i + 1))
        .collect())
}
