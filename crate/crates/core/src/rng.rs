//! Seed handling. Every random stream is derived from one master seed by
//! selecting a ChaCha stream, so streams never overlap and never depend on
//! the order in which they are created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids for the independent consumers of the master seed.
pub mod stream {
    pub const SCENES: u64 = 1;
    pub const AUGMENT: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const INIT: u64 = 4;
    pub const HOLDOUT: u64 = 5;
    pub const REGRESSOR: u64 = 6;
    pub const GRADCHECK: u64 = 7;
}

pub type Rng = ChaCha8Rng;

/// Generator for `stream` under `seed`.
pub fn split(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator for item `index` within `stream` (e.g. one scene of many).
pub fn split_indexed(seed: u64, stream: u64, index: u64) -> Rng {
    split(seed, (stream << 40) ^ index)
}
