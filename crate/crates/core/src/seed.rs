//! Seed derivation.
//!
//! Every random stream in an experiment is keyed by a master seed plus a
//! purpose tag and a short list of coordinates (client id, round, epoch...).
//! Keys are folded through the SplitMix64 finalizer, so changing any single
//! coordinate yields an unrelated stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags that separate independent random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Data = 2,
    Selection = 3,
    Training = 4,
    Masking = 5,
    Attack = 6,
    Shuffle = 7,
    TestSet = 8,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash `base` together with each coordinate in order.
pub fn mix(base: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(base), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

/// Sub-seed for a named stream.
pub fn derive(master: u64, stream: Stream, coords: &[u64]) -> u64 {
    mix(mix(master, &[stream as u64]), coords)
}

/// Seeded ChaCha8 generator; the single RNG type used across the crate.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
