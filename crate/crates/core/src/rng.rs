//! Counter-keyed random streams.
//!
//! Every stochastic unit of work (a replica, a particle set, a data shuffle)
//! owns a ChaCha8 stream whose seed is a hash of the run seed and a tuple of
//! integer tags. Results therefore depend only on the tags, never on which
//! thread happened to run the work or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Tag namespaces so that different consumers never collide.
pub mod tag {
    pub const PRIOR_DRAW: u64 = 1;
    pub const IMPORTANCE: u64 = 2;
    pub const RESAMPLE: u64 = 3;
    pub const ULA: u64 = 4;
    pub const SWAP: u64 = 5;
    pub const SHUFFLE: u64 = 6;
    pub const INIT: u64 = 7;
    pub const GENERATE: u64 = 8;
    pub const GRID: u64 = 9;
    pub const DATA: u64 = 10;
    pub const CD_PRIOR: u64 = 11;
    pub const VALIDATE: u64 = 12;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a seed and a sequence of tags into a 256-bit ChaCha key.
pub fn stream(seed: u64, tags: &[u64]) -> StreamRng {
    let mut h = splitmix64(seed ^ 0x6b61_656d_5f72_6e67);
    for &t in tags {
        h = splitmix64(h ^ splitmix64(t.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    let mut key = [0u8; 32];
    let mut s = h;
    for chunk in key.chunks_exact_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
