//! Deterministic, portable random streams.
//!
//! One experiment seed fans out into independent ChaCha streams, one per
//! consumer (model synthesis, attack inputs, dataset points), so changing
//! the number of draws in one consumer never shifts another. Floats are
//! derived from raw 64-bit output with fixed arithmetic instead of the
//! `rand` distribution machinery, which keeps the bit stream stable across
//! library versions.

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream ids, one per consumer of a given experiment seed.
pub mod stream {
    pub const EXTRACTOR_PARAMS: u64 = 0;
    pub const STUDENT_PARAMS: u64 = 1;
    pub const ATTACK_INPUTS: u64 = 2;
    pub const DATASET: u64 = 3;
}

/// A seeded ChaCha stream with portable float helpers.
pub struct SeededStream {
    rng: ChaCha12Rng,
}

impl SeededStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream_id.into());
        SeededStream { rng }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * 2f64.powi(-53)
    }

    /// Uniform in [low, high).
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + self.unit_f64() * (high - low)
    }

    /// Standard normal via Box-Muller. Draws two uniforms per call; the sine
    /// half of the pair is discarded so each call consumes a fixed amount of
    /// the stream.
    pub fn standard_normal(&mut self) -> f64 {
        // u1 in (0, 1] so the log is always finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * 2f64.powi(-53);
        let u2 = self.unit_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
