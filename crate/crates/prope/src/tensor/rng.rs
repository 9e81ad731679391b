//! Deterministic seeded randomness.
//!
//! Backed by ChaCha8 (a counter-based stream cipher RNG): `rand_chacha`
//! documents the algorithm and guarantees identical output for identical
//! seeds across platforms and crate versions. Independent substreams come
//! from ChaCha's 64-bit stream parameter, which is how per-scene generators
//! are derived from one dataset seed.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

/// Serializable generator state: (seed, stream, word position).
pub type RngState = ([u8; 32], u64, u128);

impl Rng {
    pub fn new(seed: u64) -> Rng {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent substream `stream` of the generator seeded with `seed`.
    pub fn substream(seed: u64, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen()
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        Normal::new(mean, std).expect("std must be finite and non-negative").sample(&mut self.inner)
    }

    /// Uniform point on the unit sphere.
    pub fn unit_sphere(&mut self) -> [f64; 3] {
        UnitSphere.sample(&mut self.inner)
    }

    /// Uniform index in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn state(&self) -> RngState {
        (self.inner.get_seed(), self.inner.get_stream(), self.inner.get_word_pos())
    }

    pub fn restore(state: RngState) -> Rng {
        let mut inner = ChaCha8Rng::from_seed(state.0);
        inner.set_stream(state.1);
        inner.set_word_pos(state.2);
        Rng { inner }
    }
}
