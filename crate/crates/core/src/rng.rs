//! Counter-based random streams.
//!
//! Every random draw in a run is taken from a stream keyed by
//! `(seed, purpose, agent, t, index)`. Streams are independent of the order
//! in which agents are scheduled, so a round can run on any number of threads
//! and still produce the same bits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags separate the streams used for different kinds of draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    /// Per-round oracle draws of Algorithms 1 and 2.
    Oracle = 1,
    /// Inner-loop draws of the double-loop baselines.
    InnerLoop = 2,
    /// Outer-step draws of the double-loop baselines.
    OuterStep = 3,
    /// Problem-instance construction.
    Instance = 4,
    /// Data shuffling.
    Shuffle = 5,
    /// Validation and diagnostics.
    Diagnostics = 6,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a stream key down to a 64-bit seed.
pub fn stream_key(seed: u64, purpose: Purpose, agent: usize, t: usize, index: usize) -> u64 {
    let mut h = splitmix64(seed);
    for word in [purpose as u64, agent as u64, t as u64, index as u64] {
        h = splitmix64(h ^ word);
    }
    h
}

/// Deterministic generator for one stream.
pub fn stream(seed: u64, purpose: Purpose, agent: usize, t: usize, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, purpose, agent, t, index))
}
