//! Deterministic random streams.
//!
//! Every stream is a ChaCha8 generator (RFC 7539 block function with 8
//! rounds) seeded from a 64-bit seed via `rand_core`'s PCG32-based seed
//! expansion, so sequences are identical across platforms. Named
//! sub-streams are derived by hashing `(seed, purpose, index)` with
//! SplitMix64.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Seeded random number generator.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for `(purpose, index)` under `seed`, e.g. the
    /// shuffle order of a given epoch.
    pub fn derive(seed: u64, purpose: &str, index: u64) -> Self {
        let mut h = splitmix64(seed);
        for b in purpose.bytes() {
            h = splitmix64(h ^ u64::from(b));
        }
        Self::new(splitmix64(h ^ index))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.random_range(lo..hi)
    }

    /// Uniform `f64` in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            idx.swap(i, j);
        }
        idx
    }

    pub fn normal_tensor<T: Real>(&mut self, shape: &[usize], mean: f64, std: f64) -> Tensor<T> {
        let dist = Normal::new(mean, std).expect("finite std");
        Tensor::from_fn(shape, |_| T::of(dist.sample(&mut self.inner)))
    }

    pub fn uniform_tensor<T: Real>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
        let dist = Uniform::new(lo, hi).expect("lo < hi");
        Tensor::from_fn(shape, |_| T::of(dist.sample(&mut self.inner)))
    }
}

/// Kaiming (He) normal initialisation: `N(0, 2 / fan_in)`.
pub fn kaiming_init<T: Real>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    if fan_in == 0 {
        return Err(Error::InvalidArgument("kaiming_init needs fan_in > 0".into()));
    }
    Ok(rng.normal_tensor(shape, 0.0, (2.0 / fan_in as f64).sqrt()))
}
