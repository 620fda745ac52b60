//! Deterministic RNG streams derived from a single master seed.
//!
//! Every randomized step in the pipeline draws from its own labeled stream
//! so that stages can run in any order, or in parallel, without perturbing
//! each other's randomness.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// A ChaCha stream keyed by `(master, tag, ids)`.
///
/// Identical arguments always produce an identical stream, on every
/// platform; distinct tags or ids produce statistically independent ones.
pub fn stream(master: u64, tag: &str, ids: &[u64]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"latent-atlas.seed.v1");
    h.update(master.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    for id in ids {
        h.update(id.to_le_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}
