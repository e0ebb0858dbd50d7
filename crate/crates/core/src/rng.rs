//! Seeded random streams.
//!
//! Every random decision in a run is drawn from a ChaCha stream keyed by the
//! run seed and a stream id, so that adding a consumer in one phase never
//! shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_SHUFFLE: u64 = 2;
pub(crate) const STREAM_AUGMENT: u64 = 3;
pub(crate) const STREAM_REPARTITION: u64 = 4;
pub(crate) const STREAM_BLOB_CENTERS: u64 = 5;
pub(crate) const STREAM_BLOB_SAMPLES: u64 = 6;
pub(crate) const STREAM_NOISE: u64 = 7;
pub(crate) const STREAM_SPLIT: u64 = 8;

/// A deterministic generator for `(seed, kind, index)`.
pub fn stream(seed: u64, kind: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((kind << 32) | (index & 0xffff_ffff));
    rng
}

pub fn from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
