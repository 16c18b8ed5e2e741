//! Seed derivation. Every random draw in the crate comes from a ChaCha8
//! stream keyed on a base seed plus a tag path, so independent parts of a
//! run never share a stream and reordering work cannot change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `tags` into `base`.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(base: u64, tags: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

/// Stream tags used across the crate.
pub(crate) mod tag {
    pub const INIT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const ENSEMBLE_STAGE1: u64 = 3;
    pub const ENSEMBLE_STAGE2: u64 = 4;
    pub const SHAPLEY: u64 = 5;
    pub const MODALITY_SELECT: u64 = 6;
    pub const CLIENT_SELECT: u64 = 7;
    pub const SUBMODEL: u64 = 8;
    pub const DATA: u64 = 9;
    pub const SPLIT: u64 = 10;
}
