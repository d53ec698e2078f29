//! Seedable, platform-independent random streams.
//!
//! Every stochastic step in the crate draws from a [`Stream`]: xoshiro256**
//! seeded through SplitMix64 (the `rand_xoshiro` seeding routine). A stream
//! is identified by a user seed and a stream id; the generator seed is
//! `seed + id * 0x9E3779B97F4A7C15 (mod 2^64)`.
//!
//! Derived variates, so other implementations can reproduce them:
//! - uniform: `(next_u64 >> 11) * 2^-53`, in `[0, 1)`
//! - normal: Box-Muller on two uniforms, `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`;
//!   the sine branch is discarded so every normal costs exactly two draws.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stream ids used across the crate. Changing them changes every output.
pub mod streams {
    pub const NOISE_GAUSSIAN: u64 = 1;
    pub const NOISE_PEPPER_SITES: u64 = 2;
    pub const NOISE_PEPPER_VALUES: u64 = 3;
    pub const MASK_SITES: u64 = 10;
    pub const MASK_VALUES: u64 = 11;
    pub const INIT: u64 = 20;
    pub const GRAD_NOISE: u64 = 30;
    pub const TRAIN_MASKS: u64 = 40;
}

#[derive(Clone, Debug)]
pub struct Stream {
    inner: Xoshiro256StarStar,
}

impl Stream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mixed = seed.wrapping_add(stream.wrapping_mul(GOLDEN_GAMMA));
        Stream { inner: Xoshiro256StarStar::seed_from_u64(mixed) }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Derive a fresh seed, e.g. one per training batch.
    pub fn next_seed(&mut self) -> u64 {
        self.next_u64()
    }
}
