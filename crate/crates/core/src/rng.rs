//! Seeded, counter-based random streams.
//!
//! Every random decision in the pipeline draws from a ChaCha stream selected by
//! `(seed, stream)`, so independent consumers never perturb each other.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as StreamRng;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn shuffle<T>(items: &mut [T], seed: u64, stream: u64) {
    items.shuffle(&mut stream_rng(seed, stream));
}

/// Stable 64-bit stream id for a name (FNV-1a).
pub fn stream_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
