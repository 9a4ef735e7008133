//! Seeded, splittable random streams.
//!
//! Each stream is a ChaCha8 keystream (counter-based) keyed by a 64-bit
//! value. Child streams are keyed by mixing the parent key with the child
//! index, so `split` never consumes parent state and chains can be handed
//! independent streams in any order.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::numerics::{Grid, Real};

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    key: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::keyed(seed, mix64(seed ^ 0x243F_6A88_85A3_08D3))
    }

    fn keyed(seed: u64, key: u64) -> Self {
        Self { seed, key, inner: ChaCha8Rng::seed_from_u64(key) }
    }

    /// Root seed this stream (or its ancestor) was created from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream `index`; does not advance `self`.
    pub fn split(&self, index: u64) -> RngStream {
        let key = mix64(self.key ^ mix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15)));
        Self::keyed(self.seed, key)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..=hi)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// I.i.d. standard-normal grid of the given shape.
pub fn gaussian_noise<T: Real>(shape: &[usize], rng: &mut RngStream) -> crate::Result<Grid<T>> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.normal())).collect();
    Grid::new(shape.to_vec(), data)
}
