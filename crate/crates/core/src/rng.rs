//! Deterministic RNG derivation.
//!
//! Every stochastic decision in the crate draws from a ChaCha8 stream keyed
//! by `(seed, domain, parts)` through SHA-256. Keying by content (document
//! ids, template names, item indices) rather than by traversal position
//! makes outputs independent of worker count and iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn digest(seed: u64, domain: &str, parts: &[u64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((domain.len() as u64).to_le_bytes());
    h.update(domain.as_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    h.finalize().into()
}

/// RNG keyed by `(seed, domain, parts)`. The domain string separates uses
/// so two call sites with the same numeric parts never share a stream.
pub fn keyed_rng(seed: u64, domain: &str, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(seed, domain, parts))
}

/// A single keyed 64-bit value, for hash-based set membership.
pub fn keyed_u64(seed: u64, domain: &str, parts: &[u64]) -> u64 {
    let d = digest(seed, domain, parts);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}
