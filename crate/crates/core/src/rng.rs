//! Deterministic random streams.
//!
//! Every consumer derives its own ChaCha stream from `(seed, purpose, index)`,
//! so sample generation and episode sampling give identical results whether
//! they run in order, out of order or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream type handed out by [`stream`].
pub type Stream = ChaCha8Rng;

/// Purposes that get disjoint random streams from the same seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Sample = 2,
    TrainEpisode = 3,
    EvalEpisode = 4,
    Test = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random stream number `index` for `purpose` under `seed`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(purpose as u64)));
    rng.set_stream(index);
    rng
}
