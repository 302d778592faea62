//! Seeded random streams.
//!
//! All randomness derives from one user seed. Each consumer draws from its
//! own ChaCha stream so components can be replayed in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Sampler = 2,
    Synth = 3,
    Bench = 4,
    Verify = 5,
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    indexed_stream(seed, which, 0)
}

/// Numbered sub-stream, e.g. one sampler per branch.
pub fn indexed_stream(seed: u64, which: Stream, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((which as u64) << 32) | index);
    rng
}
