//! Seeded, counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream identified by
//! a 64-bit seed and a [`Purpose`]. Streams for different purposes never
//! overlap, so adding reward noise does not perturb the state path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    InitialState = 1,
    Increments = 2,
    RewardNoise = 3,
    BurnIn = 4,
    Auxiliary = 5,
}

pub fn stream(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// Seed for replicate `index` of an experiment rooted at `base`.
pub fn replicate_seed(base: u64, index: u64) -> u64 {
    base.wrapping_add(index)
}
