//! Seeded randomness. Every stochastic choice in the crate flows through a
//! `ChaCha8Rng` derived from an explicit seed so that runs are bitwise
//! reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for a seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// splitmix64 finalizer; decorrelates derived seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent sub-seed from a base seed and a salt (layer index,
/// epoch number, ...). Pure, so the derivation itself is reproducible.
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    splitmix64(base ^ splitmix64(salt))
}
