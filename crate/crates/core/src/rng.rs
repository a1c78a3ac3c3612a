//! Seed derivation. Every random stream in the crate is keyed by an explicit
//! seed plus a path of labels, so results never depend on iteration order or
//! worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

/// Derives a child seed from `seed` and a list of labels.
pub fn derive_seed(seed: u64, labels: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for label in labels {
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
    }
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_stream(seed: u64, labels: &[&str]) -> Stream {
    stream(derive_seed(seed, labels))
}

/// Uniform value in `[0, 1)` determined by `seed` and `labels`.
pub fn hash_unit(seed: u64, labels: &[&str]) -> f64 {
    (derive_seed(seed, labels) >> 11) as f64 / (1u64 << 53) as f64
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
