//! Deterministic seed streams.
//!
//! Every random decision in a fit is drawn from a stream keyed by the master
//! seed plus a path of tags (group index, tree index, purpose). Streams never
//! depend on scheduling, so parallel fits are reproducible bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a path of tags.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(mix64(seed), |acc, &t| mix64(acc ^ mix64(t.wrapping_add(0x632B_E59B_D9B4_E019))))
}

pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Maps a 64-bit hash to a uniform draw in `[0, 1)`.
#[inline]
pub(crate) fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

// Purpose tags for the streams used during fitting.
pub(crate) const TAG_HALF_SAMPLE: u64 = 1;
pub(crate) const TAG_SUBSAMPLE: u64 = 2;
pub(crate) const TAG_HONESTY: u64 = 3;
pub(crate) const TAG_TREE: u64 = 4;
pub(crate) const TAG_BANDWIDTH: u64 = 5;
