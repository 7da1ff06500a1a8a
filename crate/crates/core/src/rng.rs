//! Seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a `u64`.
//! Child seeds are derived with the SplitMix64 finalizer so that a stream can
//! be reconstructed from `(parent seed, stream label)` alone:
//!
//! ```text
//! mix_seed(s, label) = splitmix64(s ^ splitmix64(label + 0x9E3779B97F4A7C15))
//! child_seed(master, arm, rep) = mix_seed(mix_seed(master, arm), rep)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix_seed(seed: u64, label: u64) -> u64 {
    splitmix64(seed ^ splitmix64(label.wrapping_add(GOLDEN_GAMMA)))
}

/// Seed of one (arm, repetition) run of an experiment.
pub fn child_seed(master: u64, arm: usize, repetition: usize) -> u64 {
    mix_seed(mix_seed(master, arm as u64), repetition as u64)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
