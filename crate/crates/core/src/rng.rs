//! Seed splitting.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng` seeded by
//! `derive_seed(parent, stream)`. Streams are plain integers; callers
//! compose them (`derive_seed(derive_seed(seed, GROUP), index)`) so that no
//! two components ever read from the same generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::point::Point;

pub type Rng = ChaCha8Rng;

/// Stream ids used inside the crate.
pub mod stream {
    pub const PRETRAIN: u64 = 0x5052_4554;
    pub const INIT: u64 = 0x494e_4954;
    pub const ROLLOUT: u64 = 0x524f_4c4c;
    pub const EVAL: u64 = 0x4556_414c;
    pub const GROUP: u64 = 0x4752_4f55;
    pub const AUDIT: u64 = 0x4155_4449;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `stream` under `parent`.
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ stream.rotate_left(17))
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(parent: u64, stream: u64) -> Rng {
    rng_from(derive_seed(parent, stream))
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn standard_normal_point(rng: &mut Rng, dim: usize) -> Point {
    Point((0..dim).map(|_| standard_normal(rng)).collect())
}
