//! Seeded random streams.
//!
//! All randomness goes through xoshiro256++ seeded via SplitMix64
//! (`rand_xoshiro`), which is platform independent. Independent streams are
//! derived from a base seed and a tag path so that, for example, dropout
//! draws and parameter initialization never share a stream.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StdRng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> StdRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `parts` into `base` to give a seed for an independent stream.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Stream tags used by the training pipeline.
pub mod tag {
    pub const SPLIT: u64 = 1;
    pub const INIT_TRANSFORM: u64 = 2;
    pub const INIT_GATE: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const GRADCHECK: u64 = 6;
}
