//! Seed derivation. Every random stream in the crate is derived from an
//! explicit 64-bit seed plus a tag path, never from ambient state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mix a parent seed with a tag into a child seed.
pub fn derive(seed: u64, tag: u64) -> u64 {
    splitmix(splitmix(seed) ^ tag.wrapping_mul(GOLDEN))
}

/// Stream tags, kept distinct so sibling streams never collide.
pub mod tag {
    pub const SYNTH: u64 = 1;
    pub const EPOCH: u64 = 2;
    pub const INIT: u64 = 3;
    pub const AUGMENT: u64 = 4;
    pub const REPEAT: u64 = 5;
    pub const RANDOM_STRATEGY: u64 = 6;
    pub const COLD_START: u64 = 7;
    pub const ENCODER: u64 = 8;
    pub const KMEANS: u64 = 9;
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
