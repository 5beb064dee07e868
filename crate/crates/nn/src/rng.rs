//! Deterministic named random sub-streams derived from one global seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Returns a generator for the stream `name` with the given coordinates
/// (for example epoch and example index). The same inputs always give
/// the same stream, independent of thread scheduling.
pub fn substream(seed: u64, name: &str, coords: &[u64]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    for c in coords {
        h.update(c.to_le_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}
