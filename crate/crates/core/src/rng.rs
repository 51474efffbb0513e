//! Seed derivation. Every stochastic component draws from its own ChaCha
//! stream keyed by `(run seed, purpose, index)` so adding a consumer never
//! perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, purpose: &str, index: u64) -> u64 {
    let mut h = mix(seed);
    for b in purpose.bytes() {
        h = mix(h ^ u64::from(b));
    }
    mix(h ^ index)
}

pub fn stream(seed: u64, purpose: &str, index: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(derive(seed, purpose, index))
}
