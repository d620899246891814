//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by a
//! master seed and a 64-bit stream id. Draw `k` of stream `s` is a pure
//! function of `(seed, s, k)`, so parallel trials never share state and a
//! run can be replayed bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Opens stream `stream` of the generator keyed by `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Builds a stream id from a purpose tag and an index inside that purpose.
///
/// Tags occupy the upper 24 bits so that indices up to 2^40 never collide
/// across purposes.
pub const fn stream_id(tag: u32, index: u64) -> u64 {
    ((tag as u64) << 40) | (index & ((1u64 << 40) - 1))
}

pub mod tags {
    pub const SAMPLES: u32 = 1;
    pub const NOISE_FLOOR: u32 = 2;
    pub const GRAD_MEAN: u32 = 3;
    pub const GRAD_COMPONENT: u32 = 4;
    pub const INIT: u32 = 5;
    pub const LIPSCHITZ: u32 = 6;
    pub const TAIL_TRIAL: u32 = 7;
    pub const NET_PROBE: u32 = 8;
    pub const WITNESS: u32 = 9;
    pub const SUITE: u32 = 10;
}
