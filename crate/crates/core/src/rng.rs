//! Deterministic random streams.
//!
//! Generator: xoshiro256** seeded through SplitMix64 (the reference seeding
//! of the xoshiro authors). Every concern draws from its own stream whose
//! seed is `master_seed + offset`. Keyed draws hash the key with SHA-256,
//! take the first 8 bytes little-endian, XOR them into the stream seed and
//! seed a fresh generator, so the value of a draw depends only on the key and
//! never on how many draws happened before it.
//!
//! Uniform doubles are `(next_u64 >> 11) * 2^-53`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use sha2::{Digest, Sha256};

/// Human-readable description written into scenario files.
pub const ALGORITHM: &str = "xoshiro256** seeded via splitmix64; keyed draws seed = stream_seed ^ \
     le_u64(sha256(key)[0..8]); uniform = (next_u64 >> 11) * 2^-53; \
     streams: outcomes = seed+1, hazards = seed+2, sensors = seed+3, repairs = seed+4";

pub const STREAM_OUTCOMES: u64 = 1;
pub const STREAM_HAZARDS: u64 = 2;
pub const STREAM_SENSORS: u64 = 3;
pub const STREAM_REPAIRS: u64 = 4;

#[derive(Debug, Clone)]
pub struct DetRng(Xoshiro256StarStar);

impl DetRng {
    pub fn seed_from(seed: u64) -> Self {
        Self(Xoshiro256StarStar::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be non-zero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Lemire's multiply-shift; the tiny bias is irrelevant at these sizes.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: i64, hi: i64) -> i64 {
        lo + self.below((hi - lo + 1) as usize) as i64
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Standard normal via Box-Muller (two uniforms per draw).
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// A stream of keyed draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyedStream {
    seed: u64,
}

impl KeyedStream {
    pub fn new(master_seed: u64, offset: u64) -> Self {
        Self {
            seed: master_seed.wrapping_add(offset),
        }
    }

    pub fn rng(&self, key: &[&str]) -> DetRng {
        DetRng::seed_from(self.seed ^ key_hash(key))
    }

    pub fn uniform(&self, key: &[&str]) -> f64 {
        self.rng(key).uniform()
    }
}

/// Stable 64-bit hash of a key tuple; parts are joined by 0x1f.
pub fn key_hash(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h.update([0x1f]);
        }
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
