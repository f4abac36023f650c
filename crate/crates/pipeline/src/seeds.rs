//! Hash-tree seeding: every episode and every sampler inside it gets a seed
//! derived from the base seed alone, so results do not depend on which
//! worker runs what.

use sha2::{Digest, Sha256};

fn fold(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn episode_seed(base: u64, episode: usize) -> u64 {
    fold(&[b"episode", &base.to_le_bytes(), &(episode as u64).to_le_bytes()])
}

pub fn attempt_seed(episode_seed: u64, attempt: usize) -> u64 {
    fold(&[b"attempt", &episode_seed.to_le_bytes(), &(attempt as u64).to_le_bytes()])
}

/// Seed for one named sampler within an attempt.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    fold(&[b"sampler", &seed.to_le_bytes(), label.as_bytes()])
}
