//! Stable seed derivation. Seeds depend only on their inputs, never on
//! execution order or the platform's hasher.

use sha2::{Digest, Sha256};

/// Mixes a base seed with a textual key into a new 64-bit seed.
pub fn derive_seed(base: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update((key.len() as u64).to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
