//! Seed derivation and deterministic RNG construction.
//!
//! Every randomized operation in the crate derives its own stream from a root
//! seed plus a stable key, so results are independent of iteration order and
//! parallel schedule.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with integer parts into a new seed.
pub fn derive_seed(root: u64, parts: &[u64]) -> u64 {
    let mut s = splitmix64(root);
    for &p in parts {
        s = splitmix64(s ^ splitmix64(p));
    }
    s
}

/// Mixes a root seed with a stable string key (FNV-1a then splitmix).
pub fn derive_seed_str(root: u64, key: &str) -> u64 {
    derive_seed(root, &[fnv1a(key.as_bytes())])
}

/// FNV-1a over raw bytes. Also used for audit hashes (batch sequences,
/// config digests) where a stable non-cryptographic digest suffices.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic RNG for the stream identified by `(root, parts)`.
pub fn rng_from(root: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, parts))
}

/// Deterministic RNG for the stream identified by `(root, key)`.
pub fn rng_from_str(root: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed_str(root, key))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let a = derive_seed(7, &[1, 2]);
        let b = derive_seed(7, &[1, 2]);
        let c = derive_seed(7, &[2, 1]);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rng_streams_replay() {
        let x: f64 = rng_from(42, &[3]).random();
        let y: f64 = rng_from(42, &[3]).random();
        assert_eq!(x.to_bits(), y.to_bits());
    }
}
