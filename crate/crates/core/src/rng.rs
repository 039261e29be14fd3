//! Counter-based random draws.
//!
//! Every draw is addressed by `(seed, stage, index)`: the ChaCha8 stream is
//! selected by `stage` and the block position by `index`, so a unit's draw
//! never depends on how many other draws happened before it.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream identifiers used across the crate.
pub mod stage {
    pub const LATENT_TYPE: u64 = 1;
    pub const TREATMENT: u64 = 2;
    pub const SELECTION: u64 = 3;
    pub const WITNESS_Y0: u64 = 10;
    pub const WITNESS_Y1: u64 = 11;
    pub const WITNESS_TREAT: u64 = 12;
    pub const WITNESS_SELECT: u64 = 13;
    pub const BOOTSTRAP: u64 = 100;
}

/// Deterministic random access into a family of ChaCha8 streams.
#[derive(Debug, Clone)]
pub struct CounterRng {
    inner: ChaCha8Rng,
    stage: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stage: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stage);
        Self { inner, stage }
    }

    pub fn stage(&self) -> u64 {
        self.stage
    }

    /// Uniform draw in `[0, 1)` addressed by `index`.
    pub fn uniform_at(&mut self, index: u64) -> f64 {
        // One 64-byte block (16 words) per index.
        self.inner.set_word_pos(u128::from(index) * 16);
        to_unit_interval(self.inner.next_u64())
    }
}

/// Sequential stream for resampling; replicate `r` gets stream `BOOTSTRAP + r`.
#[derive(Debug, Clone)]
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn uniform(&mut self) -> f64 {
        to_unit_interval(self.inner.next_u64())
    }

    /// Unbiased integer in `0..n` by rejection on the top bits.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.inner.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }
}

#[inline]
fn to_unit_interval(v: u64) -> f64 {
    (v >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
