//! Named random substreams derived from a single root seed.
//!
//! Every stochastic step (bank sampling, planning, order shuffling, generation
//! seeds) draws from its own stream so that changing one stage never perturbs
//! another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const BANK: &str = "bank";
pub const PLAN: &str = "plan";
pub const SHUFFLE: &str = "shuffle";
pub const GENERATE: &str = "generate";
pub const SUBSET: &str = "subset";

fn digest(root: u64, name: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

pub fn substream(root: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(root, name, index))
}

/// A derived 64-bit seed, e.g. for a backend request.
pub fn derive(root: u64, name: &str, index: u64) -> u64 {
    let d = digest(root, name, index);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}
