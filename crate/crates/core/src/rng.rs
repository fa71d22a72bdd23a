//! Deterministic RNG streams.
//!
//! Every random draw in the toolkit descends from one 64-bit seed. Independent
//! streams (per trial, per frame, per balloon, ...) are derived by mixing the
//! seed with a fixed tag path, so results do not depend on execution order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive an independent stream from `seed` and a tag path.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(seed);
    for &t in tags {
        state = splitmix64(state ^ t.wrapping_mul(0xd1342543de82ef95));
    }
    let mut key = [0u8; 32];
    for (chunk, k) in key.chunks_exact_mut(8).zip(0u64..) {
        state = splitmix64(state.wrapping_add(k));
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(42, &[1, 2]).gen();
        let b: u64 = stream(42, &[1, 2]).gen();
        let c: u64 = stream(42, &[1, 3]).gen();
        let d: u64 = stream(43, &[1, 2]).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
