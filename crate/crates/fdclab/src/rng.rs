//! Seed derivation and RNG construction.
//!
//! Every random quantity in the crate is drawn from a [`ChaCha8Rng`] built
//! from an explicit seed; there is no ambient RNG state. Independent streams
//! (e.g. the noise of each trajectory in a dataset) are derived from a master
//! seed with [`mix`] so that changing one consumer's draw count cannot shift
//! another's.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer. Bijective, well-dispersed; the standard choice for
/// deriving child seeds from a master seed plus a stream index.
pub fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG for sub-stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    rng_from(mix(seed, stream))
}
