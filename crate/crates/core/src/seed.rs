//! Named, reproducible sub-seeds derived from one master seed.

use sha2::{Digest, Sha256};

/// Stable 64-bit seed for `(master, label, parts)`.
pub fn derive(master: u64, label: &str, parts: &[i64]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("32-byte digest"))
}

pub fn rng(master: u64, label: &str, parts: &[i64]) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(derive(master, label, parts))
}
