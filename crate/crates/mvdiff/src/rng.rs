//! Deterministic RNG streams.
//!
//! Every run owns a single `u64` seed. Subsystems derive independent streams
//! by mixing string labels (and indices) into the seed with FNV-1a, so adding
//! a new consumer never shifts the draws of an existing one. Streams are
//! ChaCha12, which is stable across platforms and releases.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derives a child seed from `seed` and a label.
pub fn mix(seed: u64, label: &str) -> u64 {
    let h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    fnv1a(h, label.as_bytes())
}

/// Derives a child seed from `seed` and an index.
pub fn mix_index(seed: u64, index: u64) -> u64 {
    let h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    fnv1a(h, &index.to_le_bytes())
}

/// RNG stream for a derived seed.
pub fn stream(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}
