//! Seed derivation. Every random draw in the engine comes from a ChaCha8
//! stream whose seed is a hash of the run seed and a set of stream tags, so
//! independent consumers never share or reorder a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(base: u64, tags: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

/// Stream tags. Values are arbitrary but must stay stable across releases
/// for results to stay reproducible.
pub mod tag {
    pub const INIT_POOL: u64 = 1;
    pub const LABELED_BATCH: u64 = 2;
    pub const UNLABELED_BATCH: u64 = 3;
    pub const ENCODER_INIT: u64 = 4;
    pub const CLASSIFIER_INIT: u64 = 5;
    pub const DISCRIMINATOR_INIT: u64 = 6;
    pub const TASK_INIT: u64 = 7;
    pub const TASK_BATCH: u64 = 8;
    pub const RANDOM_SELECT: u64 = 9;
    pub const DATA: u64 = 10;
    pub const TEST_SPLIT: u64 = 11;
    pub const IMBALANCE: u64 = 12;
    pub const SESSION_ROUND: u64 = 13;
}
