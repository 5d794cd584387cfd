//! Seeded random streams.
//!
//! Every parallel task draws from its own ChaCha stream selected by a
//! 64-bit key, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Combine a key with another word; order-sensitive.
pub fn combine(key: u64, word: u64) -> u64 {
    mix64(key ^ mix64(word))
}

/// Key derived from the bit pattern of a slice of floats.
pub fn key_of_slice(values: &[f64]) -> u64 {
    values
        .iter()
        .fold(0x5151_u64, |acc, v| combine(acc, v.to_bits()))
}

/// Stream `key` of the generator seeded by `seed`.
pub fn stream(seed: u64, key: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    rng
}
