//! Seeded substreams.
//!
//! Every random quantity is drawn from a stream addressed by
//! `(master seed, purpose tag, index)`, so results never depend on how work
//! is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags for substreams.
pub mod tag {
    pub const MVN_DRAWS: u64 = 0x6d76_6e00;
    pub const CHI_SQUARE: u64 = 0x6368_6973;
    pub const COVARIATE: u64 = 0x636f_7661;
    pub const ERRORS: u64 = 0x6572_7273;
    pub const REPLICATE_CRITICAL: u64 = 0x7265_7063;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and an index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

pub fn substream(seed: u64, tag: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, tag));
    rng.set_stream(index);
    rng
}
