//! Seed derivation. Every random stream in the crate descends from the
//! single user seed through [`stream`], so results never depend on thread
//! scheduling or wall-clock time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, tags...)`.
pub fn stream(seed: u64, tags: &[u64]) -> Rng {
    let mut h = splitmix(seed);
    for &t in tags {
        h = splitmix(h ^ splitmix(t));
    }
    ChaCha8Rng::seed_from_u64(h)
}

// Tags separating the top-level consumers of randomness.
pub const TAG_PRETRAIN: u64 = 1;
pub const TAG_KMEANS: u64 = 2;
pub const TAG_DAM: u64 = 3;
pub const TAG_DENOISER_INIT: u64 = 4;
pub const TAG_EPOCH: u64 = 5;
pub const TAG_BANDS: u64 = 6;
pub const TAG_EVAL: u64 = 7;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, &[1, 2]).gen();
        let b: u64 = stream(7, &[1, 2]).gen();
        let c: u64 = stream(7, &[2, 1]).gen();
        let d: u64 = stream(8, &[1, 2]).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
