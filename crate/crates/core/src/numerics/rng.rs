//! Seed derivation.
//!
//! Every random stream in the toolkit is keyed by a 64-bit master seed and
//! a path of stream labels. Derivation is a pure function of the path, so
//! the value a trial or candidate sees never depends on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `seed` along `path`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed.wrapping_add(GOLDEN)), |acc, &p| {
            splitmix64(acc ^ splitmix64(p.wrapping_add(GOLDEN).wrapping_mul(GOLDEN)))
        })
}

/// Stream labels used throughout the crate.
pub mod stream {
    pub const CSBM_LABELS: u64 = 1;
    pub const CSBM_EDGES: u64 = 2;
    pub const CSBM_FEATURES: u64 = 3;
    pub const CSBM_SPLIT: u64 = 4;
    pub const GCN_INIT: u64 = 10;
    pub const CALIB_INIT: u64 = 20;
    pub const CALIB_RUN: u64 = 21;
    pub const THEORY_WORLD: u64 = 30;
    pub const THEORY_TRIAL: u64 = 31;
    pub const THEORY_TRAIN: u64 = 32;
    pub const THEORY_EVAL: u64 = 33;
    pub const THEORY_OFFSET: u64 = 34;
}

/// Counter-based ChaCha generator seeded from a derived seed.
pub fn rng_for(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_pure_and_path_sensitive() {
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[1]), derive_seed(8, &[1]));
        let a: u64 = rng_for(3, &[4]).random();
        let b: u64 = rng_for(3, &[4]).random();
        assert_eq!(a, b);
    }
}
