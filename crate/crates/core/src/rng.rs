//! Seed handling. Every random draw in the crate flows from an explicit
//! byte seed so that whole elections replay bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Deterministic CSPRNG keyed by `SHA-256("sbvote/rng" || seed)`.
pub fn seeded_rng(seed: &[u8]) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(b"sbvote/rng");
    h.update(seed);
    ChaCha20Rng::from_seed(h.finalize().into())
}

/// Derives a labelled child seed, e.g. one per voter or per proof.
pub fn sub_seed(parent: &[u8], label: &str, index: u64) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(b"sbvote/sub-seed");
    h.update((parent.len() as u64).to_be_bytes());
    h.update(parent);
    h.update((label.len() as u64).to_be_bytes());
    h.update(label.as_bytes());
    h.update(index.to_be_bytes());
    h.finalize().to_vec()
}
