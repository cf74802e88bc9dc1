//! Seeded random streams.
//!
//! Every random decision is drawn from a stream keyed by the run seed and a
//! short path (iteration, purpose, ray index, …). Work can therefore be split
//! across threads in any way without changing a single draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream purposes, used as the second path component.
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const SCENE: u64 = 2;
    pub const BATCH: u64 = 3;
    pub const COARSE: u64 = 4;
    pub const FINE: u64 = 5;
    pub const MASK: u64 = 6;
    pub const EVAL: u64 = 7;
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for `seed` and `path`.
pub fn substream(seed: u64, path: &[u64]) -> StreamRng {
    let mut state = seed;
    let mut h = splitmix64(&mut state);
    for &p in path {
        state ^= p.wrapping_mul(0xD6E8_FEB8_6659_FD93).rotate_left(17);
        h ^= splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).wrapping_add(h).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
