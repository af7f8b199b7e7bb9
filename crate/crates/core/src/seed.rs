//! Named seed derivation.
//!
//! Every random decision in the pipeline draws from a generator whose seed is
//! derived from the run's root seed plus a purpose string (and, where work is
//! split, a key such as a query or a block index). The derivation is a fixed
//! function of its inputs, so results do not depend on thread count or on the
//! order in which shards are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a. Stable across platforms and compiler versions.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, purpose: &str) -> u64 {
    mix64(seed ^ mix64(fnv1a(purpose.as_bytes())))
}

pub fn derive_keyed(seed: u64, purpose: &str, key: &[u8]) -> u64 {
    mix64(derive(seed, purpose) ^ fnv1a(key))
}

pub fn derive_indexed(seed: u64, purpose: &str, index: u64) -> u64 {
    mix64(derive(seed, purpose) ^ mix64(index))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
