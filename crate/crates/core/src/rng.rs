//! Seed derivation.
//!
//! Every random quantity is drawn from a ChaCha8 stream whose seed is derived
//! from a root seed and a stream index with [`split_seed`]. The rule is
//! `splitmix64(root + 0x9E3779B97F4A7C15 * (index + 1))`, so adding trials or
//! frames never changes the streams of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stream indices used by the simulator. Frame noise uses `NOISE_BASE + m`.
pub mod streams {
    pub const DATA_SYMBOLS: u64 = 1;
    pub const BEAM_ALIGNMENT: u64 = 2;
    pub const BACKSCATTER: u64 = 3;
    pub const NOISE_BASE: u64 = 1 << 32;
}

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn split_seed(root: u64, index: u64) -> u64 {
    splitmix64(root.wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1))))
}

pub fn stream(root: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(split_seed(root, index))
}
