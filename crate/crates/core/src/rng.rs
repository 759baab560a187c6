//! Deterministic per-work-item random streams.
//!
//! Every pixel or experiment owns a ChaCha8 stream selected by its index
//! from a shared 64-bit seed. Separate `domain`s keep independent
//! consumers of the same seed (scan shots, Monte Carlo prediction, bootstrap)
//! from reusing each other's streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream for work item `index` in the default domain.
pub fn stream(seed: u64, index: u64) -> Stream {
    domain_stream(seed, 0, index)
}

/// Stream for work item `index` in `domain`.
pub fn domain_stream(seed: u64, domain: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, domain));
    rng.set_stream(index);
    rng
}

// splitmix64 finalizer, so that nearby (seed, domain) pairs get unrelated keys
fn mix(seed: u64, domain: u64) -> u64 {
    let mut z = seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn draws(mut rng: Stream) -> Vec<u64> {
        (0..8).map(|_| rng.random()).collect()
    }

    #[test]
    fn same_index_same_sequence() {
        assert_eq!(draws(stream(7, 3)), draws(stream(7, 3)));
    }

    #[test]
    fn streams_and_domains_differ() {
        let x: u64 = stream(7, 3).random();
        let y: u64 = stream(7, 4).random();
        let z: u64 = domain_stream(7, 1, 3).random();
        assert_ne!(x, y);
        assert_ne!(x, z);
    }
}
