//! Seeded deterministic randomness.
//!
//! Every random decision in the pipeline (bit flips, sketch row choice,
//! selection shuffles) draws from a [`RandomSource`], a ChaCha8 stream
//! whose position can be captured and restored, so a snapshotted run
//! resumes exactly where it left off.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Serializable position of a [`RandomSource`] stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

/// Deterministic pseudo-random stream: identical seeds yield identical draw
/// sequences regardless of platform.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RngState", into = "RngState")]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Derive an independent substream from a master seed. The mapping is
    /// fixed so that snapshots and reruns agree on every stream.
    pub fn derive(master_seed: u64, stream: u64) -> Self {
        Self::from_seed(splitmix64(
            master_seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15),
        ))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Bernoulli draw with probability `p` of `true`.
    pub fn flip(&mut self, p: f64) -> bool {
        self.rng.gen_bool(p)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform draw in `[0, n)`.
    pub fn below(&mut self, n: u32) -> u32 {
        self.rng.gen_range(0..n)
    }

    pub fn below_usize(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// In-place Fisher-Yates shuffle. Hand-rolled so the draw pattern stays
    /// fixed independent of `rand` internals.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below_usize(i + 1);
            items.swap(i, j);
        }
    }
}

impl From<RngState> for RandomSource {
    fn from(state: RngState) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(state.seed);
        rng.set_word_pos(state.word_pos);
        Self {
            seed: state.seed,
            rng,
        }
    }
}

impl From<RandomSource> for RngState {
    fn from(source: RandomSource) -> Self {
        RngState {
            seed: source.seed,
            word_pos: source.rng.get_word_pos(),
        }
    }
}

/// splitmix64 finalizer; also used to spread hash and stream keys.
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
