//! Deterministic seed derivation.
//!
//! Every randomized operation in the crate takes an explicit seed and derives
//! its own generator, so independent calls never share RNG state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates nearby seed values.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combine a base seed with a stream of sub-indices into a fresh seed.
pub fn derive_seed(seed: u64, stream: &[u64]) -> u64 {
    let mut acc = mix(seed);
    for &s in stream {
        acc = mix(acc ^ mix(s));
    }
    acc
}

/// Deterministic generator for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derive_is_deterministic_and_stream_sensitive() {
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[1]), derive_seed(8, &[1]));
    }

    #[test]
    fn rng_streams_are_reproducible() {
        let a: Vec<f64> = rng_for(3, &[0]).random_iter().take(4).collect();
        let b: Vec<f64> = rng_for(3, &[0]).random_iter().take(4).collect();
        assert_eq!(a, b);
    }
}
