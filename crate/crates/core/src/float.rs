//! Bit-exact binary64 utilities.
//!
//! The attack operates on the machine representation of intermediate
//! values, so this module treats every `f64` as what it is on the device:
//! a 64-bit word. Bit 63 is the sign, bits 62..52 the exponent, bits 51..0
//! the mantissa.

use crate::error::Error;
use crate::Result;

/// A binary64 value viewed simultaneously as a real number and as its
/// 64-bit storage pattern. The two views are always consistent:
/// `value -> bits -> value` is the identity for every representable
/// pattern including -0.0, infinities, and NaN payloads.
///
/// Equality compares the storage pattern, so `-0.0 != +0.0` and a NaN
/// equals itself when the payloads match.
#[derive(Debug, Clone, Copy)]
pub struct FloatWord(f64);

impl PartialEq for FloatWord {
    fn eq(&self, other: &Self) -> bool {
        self.bits() == other.bits()
    }
}

impl Eq for FloatWord {}

/// Index of the sign bit in a binary64 word.
pub const SIGN_BIT: u32 = 63;

impl FloatWord {
    pub fn new(value: f64) -> Self {
        FloatWord(value)
    }

    pub fn from_bits(bits: u64) -> Self {
        FloatWord(f64::from_bits(bits))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn bits(self) -> u64 {
        self.0.to_bits()
    }

    /// Flips exactly one bit of the storage pattern. `index` 0 is the least
    /// significant mantissa bit, 63 the sign bit.
    pub fn flip_bit(self, index: u32) -> Result<Self> {
        if index > SIGN_BIT {
            return Err(Error::Usage(format!(
                "bit index {index} out of range 0..=63"
            )));
        }
        Ok(FloatWord::from_bits(self.bits() ^ (1u64 << index)))
    }

    /// Flips the sign bit. For finite nonzero values this is exact negation;
    /// for +/-0.0 the bit pattern changes while the value still compares
    /// equal to 0.0.
    pub fn sign_flip(self) -> Self {
        FloatWord::from_bits(self.bits() ^ (1u64 << SIGN_BIT))
    }
}

impl From<f64> for FloatWord {
    fn from(value: f64) -> Self {
        FloatWord(value)
    }
}

/// Pre-softmax activations of the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(pub Vec<f64>);

impl LogitVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Softmax outputs. For finite logits every entry is mathematically in
/// (0, 1) and the entries sum to 1; in binary64 an entry can saturate to
/// exactly 0.0 or 1.0 when one logit dominates, and faulted runs that
/// mutate an output directly may leave this range entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(pub Vec<f64>);

impl ProbabilityVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Index of the largest entry, ties broken by lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// Index of the largest entry, ties broken by lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax: subtracts the running maximum before
/// exponentiation so the largest exponent argument is 0. This changes
/// nothing mathematically and keeps the denominator in [1, m].
pub fn softmax(logits: &LogitVector) -> Result<ProbabilityVector> {
    if logits.is_empty() {
        return Err(Error::Usage("softmax of an empty logit vector".into()));
    }
    let y = logits.as_slice();
    for (i, &v) in y.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: format!("softmax logit [{i}] = {v}"),
            });
        }
    }
    let max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = y.iter().map(|&v| (v - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    Ok(ProbabilityVector(exps.iter().map(|&e| e / denom).collect()))
}

/// Single-precision variant used by the reduced-precision victim mode.
/// Every operation rounds to binary32, mirroring a device that stores and
/// computes in 32-bit floats; outputs are widened exactly afterwards.
pub fn softmax_f32(logits: &[f32]) -> Result<Vec<f32>> {
    if logits.is_empty() {
        return Err(Error::Usage("softmax of an empty logit vector".into()));
    }
    for (i, &v) in logits.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: format!("softmax logit [{i}] = {v}"),
            });
        }
    }
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&v| (v - max).exp()).collect();
    let denom: f32 = exps.iter().sum();
    Ok(exps.iter().map(|&e| e / denom).collect())
}
