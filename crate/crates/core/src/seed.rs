//! Stable seed derivation for independent, reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 finaliser.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over a label; stable across platforms and compiler versions.
pub fn hash_label(label: &str) -> u64 {
    label
        .as_bytes()
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Derives a child seed from a parent seed and a textual label.
pub fn derive(seed: u64, label: &str) -> u64 {
    mix(seed ^ mix(hash_label(label)))
}

/// Derives a child seed from a parent seed and an integer index.
pub fn derive_index(seed: u64, index: u64) -> u64 {
    mix(seed ^ mix(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
