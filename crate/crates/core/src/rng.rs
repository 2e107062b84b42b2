//! Seed derivation.
//!
//! Every random quantity comes from a ChaCha stream keyed by a 64-bit seed.
//! Child seeds are derived by hashing `(parent, label, index)`, so the value
//! drawn for trial `t` of cell `c` never depends on how many other trials or
//! cells exist, nor on the order they are executed in.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Labels separating the independent streams of one problem instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Signal = 1,
    Gains = 2,
    Ensemble = 3,
    Cell = 4,
    Trial = 5,
    Image = 6,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed, a stream label and an index.
pub fn derive_seed(parent: u64, stream: Stream, index: u64) -> u64 {
    let a = splitmix64(parent ^ (stream as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    splitmix64(a ^ splitmix64(index))
}

/// Generator for `seed`.
pub fn rng_from_seed(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Generator for the `index`-th sub-stream of `seed`, using the cipher's
/// native stream counter rather than a re-hash.
pub fn rng_for_stream(seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
