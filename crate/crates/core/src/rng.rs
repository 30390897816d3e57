//! Seeded generators. All randomness in the crate flows through here.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for one item, derived from the run seed, the item id
/// and a round counter. Serial and parallel drivers that use this agree.
pub fn substream(seed: u64, item_id: &str, round: u64) -> Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((item_id.len() as u64).to_le_bytes());
    h.update(item_id.as_bytes());
    h.update(round.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
