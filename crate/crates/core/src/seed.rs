//! Seed derivation: every component draws its randomness from one root seed
//! split by a fixed string label.

use sha2::{Digest, Sha256};

/// First eight bytes (little-endian) of SHA-256(root || label).
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
}
