//! Seed derivation for reproducible sampling.
//!
//! Every random draw in the toolkit flows through a ChaCha8 stream obtained
//! from a 64-bit seed plus a stage tag, so the same seed always reproduces
//! the same bytes regardless of how many draws other stages consumed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stage tags keep the per-operation streams disjoint.
pub mod stage {
    pub const DEFORM: u64 = 0x01;
    pub const GMM: u64 = 0x02;
    pub const INTENSITY: u64 = 0x03;
    pub const BIAS: u64 = 0x04;
    pub const NOISE: u64 = 0x05;
    pub const GAMMA: u64 = 0x06;
    pub const RESOLUTION: u64 = 0x07;
    pub const PHANTOM: u64 = 0x08;
    pub const INIT: u64 = 0x09;
    pub const TRAIN: u64 = 0x0a;
}

/// splitmix64 finalizer; decorrelates consecutive seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed for a tagged stage.
pub fn derive(seed: u64, tag: u64) -> u64 {
    mix(seed ^ mix(tag))
}

/// RNG stream for one (seed, stage) pair.
pub fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag))
}
