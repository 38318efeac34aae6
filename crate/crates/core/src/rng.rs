//! Counter-based, splittable random streams.
//!
//! A stream is addressed by `(root_seed, major, minor)`. The key of the
//! underlying ChaCha8 generator is derived from `(root_seed, major)` by a
//! SplitMix64 expansion and `minor` selects the ChaCha stream id, so every
//! lane is reproducible independently of the order in which lanes are used.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type LaneRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    root_seed: u64,
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(root_seed: u64) -> Self {
        Self { root_seed }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    /// Generator for lane `(major, minor)`.
    pub fn lane(&self, major: u64, minor: u64) -> LaneRng {
        let mut m = major;
        let mut state = self.root_seed ^ splitmix64(&mut m);
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(minor);
        rng
    }

    /// A child stream with an independent key space, e.g. one per purpose.
    pub fn child(&self, tag: u64) -> RngStream {
        let mut state = self.root_seed ^ tag.rotate_left(17) ^ 0xA5A5_5A5A_C3C3_3C3C;
        RngStream::new(splitmix64(&mut state))
    }
}
