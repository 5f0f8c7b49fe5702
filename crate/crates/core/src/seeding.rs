//! Labeled sub-seed derivation.
//!
//! Every random stream in the pipeline (model init, batch shuffling,
//! reparameterization noise, retrieval noise, synthesis) is keyed by a
//! component label plus the run seed, so toggling one component never
//! shifts the draws consumed by another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over `bytes`, folded with a starting state.
pub fn fnv1a64(state: u64, bytes: &[u8]) -> u64 {
    let mut h = state;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derive a sub-seed for `label` from a base seed.
///
/// Pure function of its arguments; stable across platforms and releases.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = fnv1a64(FNV_OFFSET ^ base.wrapping_mul(FNV_PRIME), label.as_bytes());
    // splitmix64 finalizer so nearby bases map to unrelated streams
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Seeded generator for the stream named by `label`.
pub fn rng_for(base: u64, label: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(base, label))
}
