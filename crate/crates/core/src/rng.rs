//! Counter-based seed derivation.
//!
//! Every stochastic choice draws from a generator keyed by the run seed plus a
//! tuple of stream identifiers (stage, step, image index, ...). No generator
//! state needs to be saved to resume a run, and per-image streams give the same
//! values whether images are processed serially or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `seed` with each stream id in turn.
pub fn derive_seed(seed: u64, streams: &[u64]) -> u64 {
    streams
        .iter()
        .fold(splitmix64(seed), |acc, &s| splitmix64(acc ^ splitmix64(s)))
}

pub fn stream(seed: u64, streams: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, streams))
}

/// Stream tags, so unrelated consumers never share a generator.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const BATCH: u64 = 2;
    pub const MASK: u64 = 3;
    pub const AUGMENT: u64 = 4;
    pub const DATA: u64 = 5;
    pub const ADAPTER: u64 = 6;
}
