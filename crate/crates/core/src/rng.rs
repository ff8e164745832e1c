//! Seed derivation. Every random stream in an experiment is a ChaCha8 stream
//! keyed by the experiment seed plus a purpose tag, so streams never alias and
//! results do not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a sequence of tags.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix(seed), |acc, &t| mix(acc ^ mix(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> SimRng {
    ChaCha8Rng::seed_from_u64(derive(seed, tags))
}

/// Purpose tags for [`derive`].
pub mod tag {
    pub const DATA: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const POISON: u64 = 3;
    pub const MODEL_INIT: u64 = 4;
    pub const GENERATOR_INIT: u64 = 5;
    pub const SCHEDULE: u64 = 6;
    pub const AGENT: u64 = 7;
    pub const AGGREGATOR: u64 = 8;
    pub const GENERATOR_POOL: u64 = 9;
    pub const STAGE_TRIGGER: u64 = 10;
    pub const STAGE_POISON: u64 = 11;
    pub const CHECK: u64 = 12;
}
