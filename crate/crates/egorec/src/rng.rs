//! Deterministic RNG derivation.
//!
//! Every stochastic stage derives its own stream from the root seed and a
//! stage label, so reordering or adding stages never perturbs the others.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// ChaCha20 stream keyed by sha256(root_seed_le || label).
pub fn derive_rng(root_seed: u64, label: &str) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(root_seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(key)
}
