//! Deterministic named random substreams.
//!
//! Every stochastic site in the pipeline draws from its own stream, derived
//! from the run seed and a label path. Adding a new consumer therefore never
//! perturbs the draws of existing ones, which keeps same-seed runs
//! reproducible across code growth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives an independent generator from `seed` and a label path such as
/// `["init", "vae"]` or `["data", "task3", "epoch7"]`.
pub fn substream(seed: u64, labels: &[&str]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for label in labels {
        hasher.update([0xff]);
        hasher.update(label.as_bytes());
    }
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Collapses a label path into a fresh seed, for call sites that pass seeds
/// onward instead of drawing directly.
pub fn derived_seed(seed: u64, labels: &[&str]) -> u64 {
    use rand::RngCore;
    substream(seed, labels).next_u64()
}
