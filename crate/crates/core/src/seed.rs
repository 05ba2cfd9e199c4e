//! Seed derivation. Every randomized component draws from its own stream,
//! keyed by the master seed and a fixed component tag, so adding a draw in
//! one subsystem never shifts another subsystem's numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// The generator used throughout the crate. ChaCha output is specified
/// independently of platform and word size.
pub type SimRng = ChaCha8Rng;

/// Derives a child seed from `master`, a component `tag` and any number of
/// integer coordinates (round, repetition, sample id, ...).
pub fn derive_seed(master: u64, tag: &str, coords: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    for c in coords {
        h.update(c.to_le_bytes());
    }
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

/// Generator for `(master, tag, coords)`.
pub fn rng_for(master: u64, tag: &str, coords: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, tag, coords))
}
