//! Seeded, stream-addressable random numbers.
//!
//! Every random draw in the crate comes from a [`SeededRng`] built from a
//! `(seed, stream)` pair. The generator is PCG64 (128-bit LCG, XSL-RR
//! output); the seed sets the initial state and the stream selects the LCG
//! increment, so distinct streams never share a sequence and a pair yields
//! the same draws on every platform.

use rand::{Rng, RngCore};
use rand_pcg::Pcg64;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: Pcg64,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let state = (u128::from(seed) << 64) | u128::from(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let inner = Pcg64::new(state, u128::from(stream));
        SeededRng { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Fills `out` with i.i.d. standard normal draws.
    pub fn fill_normal(&mut self, out: &mut [f32]) {
        for v in out {
            *v = self.inner.sample(StandardNormal);
        }
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform index in `0..n`. `n` must be non-zero.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.random_range(lo..hi)
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
