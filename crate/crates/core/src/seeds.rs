//! Deterministic seed derivation.
//!
//! Every random draw in the engine comes from a ChaCha stream keyed by a
//! seed derived here, so results never depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a list of stream coordinates.
pub fn derive(parent: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(parent), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// Stream tags keep unrelated consumers of one parent seed apart.
pub const STREAM_EPISODE: u64 = 1;
pub const STREAM_AUG_SUPPORT: u64 = 2;
pub const STREAM_AUG_QUERY: u64 = 3;
pub const STREAM_INIT: u64 = 4;
pub const STREAM_DATA: u64 = 5;
pub const STREAM_TRAIN: u64 = 6;
pub const STREAM_VALIDATION: u64 = 7;
pub const STREAM_AUG_UNLABELED: u64 = 8;
