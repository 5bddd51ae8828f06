//! The single pseudo-random source used by every stochastic step in the
//! library: parameter initialization, dataset shuffling, splitting and
//! dropout masks.
//!
//! The generator is PCG-XSL-RR 128/64 (`rand_pcg::Pcg64`) seeded through
//! `SeedableRng::seed_from_u64`. Derived quantities are computed here rather
//! than through a distribution crate so their exact bit patterns are pinned:
//!
//! * `uniform01` takes the top 53 bits of `next_u64` and scales by 2^-53,
//!   giving a value in `[0, 1)`.
//! * `uniform(lo, hi)` is `lo + (hi - lo) * uniform01()`.
//! * `normal()` is the Box–Muller cosine branch,
//!   `sqrt(-2 ln(1 - u1)) * cos(2π u2)`, consuming two uniforms per call.
//! * `below(n)` uses rejection sampling on the 64-bit output, so it is
//!   unbiased.

use rand_core::{Rng as _, SeedableRng};
use rand_pcg::Pcg64;

#[derive(Debug, Clone)]
pub struct Rng {
    inner: Pcg64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Pcg64::seed_from_u64(seed),
        }
    }

    /// Child stream for a labelled sub-task, e.g. the shuffle order of one
    /// epoch. Streams with different `(seed, tag)` pairs are independent.
    pub fn derive(seed: u64, tag: u64) -> Self {
        Self::new(splitmix64(seed ^ splitmix64(tag.wrapping_add(0x9e37_79b9_7f4a_7c15))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform01()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform01();
        let u2 = self.uniform01();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// Fisher–Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
