//! Named deterministic random streams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Stream `name` of root seed `root`: ChaCha20 keyed by SHA-256(root ‖ name).
pub fn named_stream(root: u64, name: &str) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(seed)
}
