//! Deterministic seed derivation.
//!
//! Every random decision in a run (data generation, partitioning, weight
//! init, client sampling, batch shuffling) draws from its own stream derived
//! from the run seed, a purpose tag, and optional indices. Streams are
//! independent of execution order, so parallel client workers cannot perturb
//! results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed, a purpose tag, and indices.
pub fn derive_seed(base: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut s = splitmix64(base ^ fnv1a(tag.as_bytes()));
    for &i in indices {
        s = splitmix64(s ^ splitmix64(i));
    }
    s
}

/// A ChaCha stream for the given (base, tag, indices) triple.
pub fn stream(base: u64, tag: &str, indices: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(base, tag, indices))
}
