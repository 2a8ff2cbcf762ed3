//! Seed derivation for independent, reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// The random generator used everywhere in the pipeline.
pub type SimRng = ChaCha8Rng;

/// Derives a child seed from a base seed and a label.
///
/// Labels name the consumer (`"persona/<conversation>"`, `"mix/<conversation>"`),
/// so every consumer owns a stream that does not shift when others draw more.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(base: u64, label: &str) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, label))
}

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
