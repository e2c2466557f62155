//! Deterministic seed derivation, so every random draw is a pure function of
//! the run seed plus its position in the pipeline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream label and an index.
pub fn derive(base: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(base) ^ stream.rotate_left(17)) ^ index)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub mod stream {
    pub const SCENE: u64 = 1;
    pub const QA: u64 = 2;
    pub const EVAL_SPLIT: u64 = 3;
    pub const INIT: u64 = 4;
    pub const PRETRAIN_BATCH: u64 = 5;
    pub const CAPTIONS: u64 = 6;
    pub const IMAGES: u64 = 7;
    pub const ALIGN_SHUFFLE: u64 = 8;
    pub const EVAL_GEN: u64 = 9;
    pub const ROUND: u64 = 10;
}
