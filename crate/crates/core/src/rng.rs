//! Seeded random streams.
//!
//! Every random draw in the crate goes through a ChaCha8 generator keyed by
//! `(seed, stream)`, so independent consumers (global noise, sparse noise,
//! expanded enhancer noise, training batches) never share a sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// Named stream ids. Values are part of the reproducibility contract.
pub mod stream {
    pub const DENSE_NOISE: u64 = 0;
    pub const SPARSE_NOISE: u64 = 1;
    pub const EXPANDED_NOISE: u64 = 2;
    pub const TRAINING: u64 = 3;
    pub const VALIDATION: u64 = 4;
    pub const INIT: u64 = 5;
    pub const SCENES: u64 = 6;
    pub const PAIRS: u64 = 7;
    pub const METRICS: u64 = 8;
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Deterministic child seed for `(seed, tag)` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}
