//! Seed derivation.
//!
//! One root seed drives a run. Every worker gets independent ChaCha streams
//! keyed by its global id and a [`Stream`] purpose, so protocol randomness
//! never shifts the breeding sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type WorkerRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Propagator draws.
    Breeding = 0,
    /// Noise inside objectives (quartic).
    Objective = 1,
    /// Exchange coin flips and random emigration/immigration choices.
    Exchange = 2,
}

/// The generator for `purpose` on worker `global_id`.
pub fn worker_rng(seed: u64, global_id: u32, purpose: Stream) -> WorkerRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(global_id) << 8) | purpose as u64);
    rng
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a key sequence into one word.
pub fn hash_keys(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix64(seed), |acc, &k| mix64(acc ^ k))
}

/// A uniform draw in `[0, 1)` that depends only on `seed` and `keys`.
pub fn unit(seed: u64, keys: &[u64]) -> f64 {
    (hash_keys(seed, keys) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
