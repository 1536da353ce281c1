//! Seed plumbing.
//!
//! Every stochastic step draws from its own stream so that reordering or
//! parallelising work never changes the numbers it produces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_xoshiro::SplitMix64;
use rand::RngCore;

/// Mix a base seed with a purpose tag and an index into a new 64-bit seed.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h = SplitMix64::seed_from_u64(seed);
    let mut acc = h.next_u64();
    for b in tag.bytes() {
        acc = SplitMix64::seed_from_u64(acc ^ u64::from(b)).next_u64();
    }
    SplitMix64::seed_from_u64(acc ^ index).next_u64()
}

pub fn stream(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index))
}

/// Seed derived from the bit pattern of an instance, so identical instances
/// map to identical streams.
pub fn instance_seed(seed: u64, instance: &[f64]) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for v in instance {
        hasher.update(v.to_bits().to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    seed ^ u64::from_le_bytes(bytes)
}
