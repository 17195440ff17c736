//! Seeded random numbers.
//!
//! The generator is PCG32 (`Lcg64Xsh32`: 64-bit LCG state, XSH-RR output)
//! from `rand_pcg`. A root generator is built from a 64-bit seed by
//! scrambling it with SplitMix64. Children are split off with
//! [`Rng::derive`]: the child of `(seed, key)` starts from state
//! `splitmix64(seed ^ splitmix64(key))` on stream `splitmix64(key ^ ROT(seed))`,
//! so it depends only on the parent seed and the key, never on how many
//! values the parent has already drawn. Distinct keys select distinct LCG
//! increments, which makes the sibling sequences distinct cycles.

use rand_core::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg32;

const DEFAULT_STREAM: u64 = 0xa02b_dbf7_bb3c_0a7b;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Combine a seed with a key, e.g. a run seed with a fold index.
pub fn mix(seed: u64, key: u64) -> u64 {
    splitmix64(seed ^ splitmix64(key))
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: Pcg32,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Pcg32::new(splitmix64(seed), DEFAULT_STREAM),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child generator for `key`.
    pub fn derive(&self, key: u64) -> Rng {
        let seed = mix(self.seed, key);
        Rng {
            seed,
            inner: Pcg32::new(seed, splitmix64(key ^ self.seed.rotate_left(17))),
        }
    }

    /// Child generator keyed by a string (layer names and the like).
    pub fn derive_str(&self, key: &str) -> Rng {
        // FNV-1a; only needs to be stable.
        let h = key.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        });
        self.derive(h)
    }

    pub fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_range(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo <= hi, "empty integer range {lo}..={hi}");
        let span = (hi - lo) as u64 + 1;
        // Lemire's multiply-shift with rejection.
        let threshold = span.wrapping_neg() % span;
        loop {
            let x = self.next_u64();
            let m = (x as u128) * (span as u128);
            if (m as u64) >= threshold {
                return lo + (m >> 64) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        mean + std * z
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.int_range(0, i);
            items.swap(i, j);
        }
    }
}
