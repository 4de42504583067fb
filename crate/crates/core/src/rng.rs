//! Seeded random streams.
//!
//! Every stochastic quantity is drawn from a ChaCha8 generator whose 64-bit
//! seed is derived by chaining SplitMix64 over a list of stream keys:
//!
//! ```text
//! h = splitmix64(seed)
//! for key in keys { h = splitmix64(h ^ key) }
//! ```
//!
//! Synthetic subjects use the keys `[subject_index, epoch_index]` for trial
//! noise and `[subject_index, SUBJECT_STREAM]` for per-subject quantities
//! (mixing matrix, trial order). ELM input weights use
//! `[subject_seed, fold, init_condition]`. Rngs are seeded with
//! `ChaCha8Rng::seed_from_u64(h)`; Gaussian draws use `rand_distr::StandardNormal`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Key reserved for per-subject (not per-epoch) streams.
pub const SUBJECT_STREAM: u64 = u64::MAX;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix64(seed), |h, &k| splitmix64(h ^ k))
}

pub fn stream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, keys))
}
