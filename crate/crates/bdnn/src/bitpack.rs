//! Bit-packed binary vectors and word-parallel agreement counting.
//!
//! A [`PackedBits`] stores a sequence of ±1 values one bit per element in
//! 64-bit words: bit 1 encodes +1, bit 0 encodes −1, element `i` lives at
//! word `i / 64`, bit `i % 64`. Padding bits past the logical length are
//! kept at zero by construction, so agreement counting only masks the final
//! word. The word layout is little-endian and is part of the checkpoint
//! format.
//!
//! Counting agreements between two packed vectors — popcount of the
//! bitwise XNOR — gives the binary dot product via `sum = 2*agreements - n`.

use crate::error::{Error, Result};
use crate::math::Sign;

/// An immutable bit-packed vector of ±1 values.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PackedBits {
    words: Vec<u64>,
    len: usize,
}

#[inline]
fn word_count(len: usize) -> usize {
    len.div_ceil(64)
}

/// Mask selecting the valid bits of the final word.
#[inline]
fn last_word_mask(len: usize) -> u64 {
    match len % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

impl PackedBits {
    /// Packs a sign sequence. Rejects empty input.
    pub fn from_signs(values: &[Sign]) -> Result<PackedBits> {
        if values.is_empty() {
            return Err(Error::Empty);
        }
        let mut words = vec![0u64; word_count(values.len())];
        for (i, &s) in values.iter().enumerate() {
            if s == Sign::Plus {
                words[i >> 6] |= 1u64 << (i & 63);
            }
        }
        Ok(PackedBits {
            words,
            len: values.len(),
        })
    }

    /// Packs the signs of a real sequence (0 maps to +1).
    pub fn from_reals(values: &[f64]) -> Result<PackedBits> {
        if values.is_empty() {
            return Err(Error::Empty);
        }
        let mut words = vec![0u64; word_count(values.len())];
        for (i, &v) in values.iter().enumerate() {
            if Sign::from_real(v) == Sign::Plus {
                words[i >> 6] |= 1u64 << (i & 63);
            }
        }
        Ok(PackedBits {
            words,
            len: values.len(),
        })
    }

    /// Builds from raw words, rejecting a wrong word count or nonzero
    /// padding bits. This is the strict entry point used by checkpoint
    /// loading, where bad padding means corruption.
    pub fn from_words(words: Vec<u64>, len: usize) -> Result<PackedBits> {
        if len == 0 {
            return Err(Error::Empty);
        }
        if words.len() != word_count(len) {
            return Err(Error::Geometry(format!(
                "expected {} words for {} bits, got {}",
                word_count(len),
                len,
                words.len()
            )));
        }
        if words[words.len() - 1] & !last_word_mask(len) != 0 {
            return Err(Error::Geometry(format!(
                "nonzero padding bits past length {len}"
            )));
        }
        Ok(PackedBits { words, len })
    }

    /// Builds from raw words, zeroing whatever sits in the padding bits.
    pub fn canonicalized(mut words: Vec<u64>, len: usize) -> Result<PackedBits> {
        if len == 0 {
            return Err(Error::Empty);
        }
        if words.len() != word_count(len) {
            return Err(Error::Geometry(format!(
                "expected {} words for {} bits, got {}",
                word_count(len),
                len,
                words.len()
            )));
        }
        let last = words.len() - 1;
        words[last] &= last_word_mask(len);
        Ok(PackedBits { words, len })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    /// Always false: construction rejects empty vectors.
    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Element at position `i`. Panics when out of bounds.
    #[inline]
    pub fn get(&self, i: usize) -> Sign {
        assert!(i < self.len, "index {i} out of bounds ({})", self.len);
        if self.words[i >> 6] >> (i & 63) & 1 == 1 {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    /// Unpacks back to a sign sequence; inverse of [`PackedBits::from_signs`].
    pub fn to_signs(&self) -> Vec<Sign> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    /// Number of positions where the two vectors hold the same value,
    /// computed as the popcount of the per-word XNOR (final word masked).
    pub fn agreement_count(&self, other: &PackedBits) -> Result<usize> {
        if self.len != other.len {
            return Err(Error::LengthMismatch {
                expected: self.len,
                got: other.len,
            });
        }
        let last = self.words.len() - 1;
        let mut agree: u64 = 0;
        for i in 0..last {
            agree += (!(self.words[i] ^ other.words[i])).count_ones() as u64;
        }
        agree += ((!(self.words[last] ^ other.words[last])) & last_word_mask(self.len))
            .count_ones() as u64;
        Ok(agree as usize)
    }

    /// Binary dot product `sum x_i * w_i` as an integer: `2*agreements - n`.
    pub fn margin(&self, other: &PackedBits) -> Result<i64> {
        let agree = self.agreement_count(other)?;
        Ok(2 * agree as i64 - self.len as i64)
    }
}

/// Neuron output from an agreement count: +1 when at least half the
/// positions agree (`2*agree - n >= 0`), −1 otherwise.
pub fn sign_from_agreements(agree: usize, n: usize) -> Result<Sign> {
    if agree > n {
        return Err(Error::AgreementOutOfRange { agree, len: n });
    }
    Ok(if 2 * agree >= n { Sign::Plus } else { Sign::Minus })
}
