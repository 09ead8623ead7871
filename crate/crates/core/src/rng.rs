//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a base seed mixed with a tag path, so that independent consumers
//! (shuffling, init, acquisition draws, ...) never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with a sequence of tags into a new seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_for(base: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, tags))
}

// Stream tags.
pub(crate) const TAG_INIT: u64 = 1;
pub(crate) const TAG_SHUFFLE: u64 = 2;
pub(crate) const TAG_POOL: u64 = 3;
pub(crate) const TAG_ACQUIRE: u64 = 4;
pub(crate) const TAG_UNLABELED: u64 = 5;
pub(crate) const TAG_NOISE: u64 = 6;
pub(crate) const TAG_SPLIT: u64 = 7;
pub(crate) const TAG_DATA: u64 = 8;
pub(crate) const TAG_CANDIDATE: u64 = 9;
pub(crate) const TAG_TRIAL: u64 = 10;
