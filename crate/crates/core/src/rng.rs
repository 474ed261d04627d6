//! Counter-based random streams.
//!
//! Every source of randomness in this crate is a ChaCha8 stream addressed by
//! a `(seed, stream id)` pair. ChaCha is a counter-mode generator, so a
//! stream's output depends only on its address, never on how many other
//! streams exist or in which order they are consumed. That is what makes
//! forests reproducible independently of thread count: tree `j` always reads
//! stream `TREE_STREAM_BASE + j` of the forest seed.
//!
//! Stream ids below 16 are reserved for data generation (features, noise);
//! ids from 16 upward belong to trees.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream id for feature draws of a dataset seed.
pub const STREAM_FEATURES: u64 = 0;
/// Stream id for noise draws of a dataset seed. Kept separate from
/// [`STREAM_FEATURES`] so that changing the noise level never perturbs the
/// feature matrix (paired experiments across noise levels).
pub const STREAM_NOISE: u64 = 1;
/// First stream id used for trees; tree `j` of a forest uses `TREE_STREAM_BASE + j`.
pub const TREE_STREAM_BASE: u64 = 16;

/// Open a deterministic stream of the given seed.
pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Derive a child seed from `(seed, domain, index)`.
///
/// Used by the experiment harness to hand every (replicate, purpose) pair its
/// own seed without any shared mutable state. SplitMix64 finalization keeps
/// distinct inputs well separated.
pub fn derive(seed: u64, domain: u64, index: u64) -> u64 {
    let mut x = seed;
    x = splitmix64(x ^ splitmix64(domain.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    x = splitmix64(x ^ splitmix64(index.wrapping_add(0xbf58_476d_1ce4_e5b9)));
    x
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Uniform draw on the open interval (0, 1): `(k + 0.5) * 2^-53` for a
/// 53-bit `k`. Never returns 0 or 1, so it is safe to feed into an inverse
/// CDF. This is the documented uniform used by the inverse-transform
/// Gaussian sampler.
pub fn unit_open<R: RngCore>(rng: &mut R) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    ((rng.next_u64() >> 11) as f64 + 0.5) * SCALE
}
