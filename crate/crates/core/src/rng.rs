//! Counter-based random streams.
//!
//! Every draw in the crate comes from a ChaCha8 stream addressed by
//! `(seed, replicate, purpose)`: the seed fixes the key and the pair
//! `(replicate, purpose)` selects the 64-bit stream id. A replicate's numbers
//! therefore never depend on scheduling, worker count, or on how many other
//! replicates were run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for; distinct purposes never share numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Environment = 1,
    Driving = 2,
    Bessel = 3,
    Auxiliary = 4,
    Excursion = 5,
    Weights = 6,
}

pub fn stream(seed: u64, replicate: u64, purpose: Purpose) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((replicate << 8) | purpose as u64);
    rng
}

#[inline]
pub fn normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}
