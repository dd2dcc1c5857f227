//! Seed derivation and RNG construction.
//!
//! Every stochastic step (dropout pass, augmentation, epoch shuffle) owns a
//! generator seeded from a value derived with [`derive_seed`], so results
//! never depend on call order across independent consumers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `seed_k = mix64(mix64(base) ^ k)`.
pub fn derive_seed(base: u64, k: u64) -> u64 {
    mix64(mix64(base) ^ k.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// 64-bit FNV-1a, used to turn sample ids into seed material.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
