//! Counter-based seed derivation.
//!
//! Every stochastic sub-task (resample j, trial t, rollout r) derives its RNG
//! stream from the master seed and a fixed tag path, so results do not depend
//! on scheduling or worker count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for cheap stream splitting.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and a path of counters/tags.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    let mut s = mix(seed);
    for &p in path {
        s = mix(s ^ mix(p));
    }
    s
}

/// RNG for a derived stream.
pub fn rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, path))
}

/// Stable numeric tags for stream derivation.
pub mod tag {
    pub const DATASET: u64 = 1;
    pub const RESAMPLE: u64 = 2;
    pub const POINT: u64 = 3;
    pub const JACKKNIFE: u64 = 4;
    pub const GROUND_TRUTH: u64 = 5;
    pub const ROLLOUT: u64 = 6;
    pub const VALUE_FN: u64 = 7;
    pub const SWEEP_DATASET: u64 = 8;
    pub const SWEEP_BOOTSTRAP: u64 = 9;
}
