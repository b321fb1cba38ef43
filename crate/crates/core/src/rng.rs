//! Seeding helpers.
//!
//! Every stochastic routine takes an explicit `u64` seed. Streams are ChaCha8
//! (a counter-based generator) keyed by that seed; derived seeds come from
//! [`hash64`], a SplitMix64 finalizer over the parent seed and a salt.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and an integer salt.
pub fn hash64(seed: u64, salt: u64) -> u64 {
    mix(mix(seed.wrapping_add(GOLDEN)) ^ salt.wrapping_mul(GOLDEN).wrapping_add(0x632b_e59b_d9b4_e019))
}

/// Derive a child seed from `seed` and a string label (FNV-1a of the label).
pub fn hash_str(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash64(seed, h)
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
