//! Deterministic, splittable random streams.
//!
//! A stream is addressed by `(seed, stream_id)` and backed by ChaCha8, whose
//! output is a pure function of key and counter. Work items that each own a
//! stream draw identical numbers no matter how they are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

/// Tags for derived streams: data, training shuffles and Monte-Carlo draws
/// of one trial each get their own.
pub mod purpose {
    pub const TRAIN_DATA: u64 = 1;
    pub const VAL_DATA: u64 = 2;
    pub const TEST_DATA: u64 = 3;
    pub const STAGE1: u64 = 4;
    pub const STAGE2: u64 = 5;
    pub const ORACLE: u64 = 6;
    pub const SPLIT: u64 = 7;
    pub const INIT: u64 = 8;
    pub const SHIFT: u64 = 9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Child stream for a sub-task, keyed by a tag.
    pub fn derive(&self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d))),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream);
        r
    }
}
