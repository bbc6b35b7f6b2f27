//! Counter-based seed derivation.
//!
//! Every random quantity in a trial is drawn from its own ChaCha stream whose
//! seed is a pure function of `(base_seed, trial_id, stream, index)`. Streams
//! never share state, so results do not depend on evaluation order or on how
//! many workers run the trials.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Sub-stream tags. Distinct tags give statistically independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Pilots = 1,
    Channel = 2,
    Noise = 3,
    Geometry = 4,
    LinkState = 5,
    ClockBias = 6,
    Search = 7,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a sequence of words into one 64-bit seed.
pub fn mix(words: &[u64]) -> u64 {
    let mut h = 0x6A09_E667_F3BC_C909u64;
    for &w in words {
        h = splitmix64(h ^ splitmix64(w));
    }
    h
}

/// Seed of trial `trial_id` under `base_seed`.
pub fn trial_seed(base_seed: u64, trial_id: u64) -> u64 {
    mix(&[base_seed, trial_id])
}

/// Independent generator for `(seed, stream, index)`; `index` is usually a BS id.
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(&[seed, stream as u64, index]))
}
