//! Portable random streams.
//!
//! Every stochastic component draws from ChaCha8, whose output is fixed
//! across platforms and builds. Independent streams are derived by mixing
//! a base seed with a key path through SplitMix64, so the draws for one
//! (stack, snapshot, layer, node) never depend on how work was scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PortableRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a key path into a single 64-bit seed.
pub fn derive_seed(seed: u64, key: &[u64]) -> u64 {
    key.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn seeded(seed: u64) -> PortableRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, key: &[u64]) -> PortableRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, key))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| stream(7, &[1, 2]).random()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let b: u64 = stream(7, &[2, 1]).random();
        assert_ne!(a[0], b);
    }

    #[test]
    fn chacha_output_is_pinned() {
        // Guards against silent generator changes across dependency bumps.
        let mut rng = seeded(42);
        let first: u64 = rng.random();
        assert_eq!(first, 12578764544318200737);
        let mut again = seeded(42);
        assert_eq!(first, again.random::<u64>());
        assert_eq!(derive_seed(0, &[]), splitmix64(0));
    }
}
