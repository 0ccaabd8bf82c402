//! Per-datum randomizers.
//!
//! Both algorithms privatize a one-hot encoding by flipping every bit
//! independently with probability `p = 1 / (exp(epsilon) + 1)`:
//!
//! * [`privatize_obh`] (OneBitHistogram) one-hot encodes a bucket index in a
//!   domain of width `m` and randomizes it.
//! * [`privatize_cms`] (CountMedianSketch) picks one of `k` hash rows
//!   uniformly at random, one-hot encodes the datum's hash in that row, and
//!   randomizes the row.
//!
//! The collector inverts the same coin to recover frequency estimates, so
//! the hash family and bit conventions here are fixed for good.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::rng::{splitmix64, RandomSource};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PrivatizeError {
    #[error("privacy parameter must be non-negative, got {0}")]
    NegativeEpsilon(f64),
    #[error("bucket {bucket} out of range for domain width {m}")]
    BucketOutOfRange { bucket: u32, m: u32 },
    #[error("datum must be non-empty")]
    EmptyDatum,
}

/// Probability that a single bit flips: `1 / (exp(epsilon) + 1)`.
///
/// Decreasing in epsilon; 0.5 at epsilon 0 (output independent of input).
pub fn coin_probability(epsilon: f64) -> Result<f64, PrivatizeError> {
    if !(epsilon >= 0.0) {
        return Err(PrivatizeError::NegativeEpsilon(epsilon));
    }
    Ok(1.0 / (libm::exp(epsilon) + 1.0))
}

/// The bit-flipping coin. `p` is always in `[0, 0.5]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasedCoin {
    p: f64,
}

impl BiasedCoin {
    pub fn from_epsilon(epsilon: f64) -> Result<Self, PrivatizeError> {
        Ok(Self {
            p: coin_probability(epsilon)?,
        })
    }

    /// Coin with an explicit flip probability. Handy for noiseless test
    /// setups (`p = 0`).
    pub fn with_probability(p: f64) -> Self {
        assert!((0.0..=0.5).contains(&p), "flip probability out of range");
        Self { p }
    }

    pub fn probability(&self) -> f64 {
        self.p
    }

    pub fn flip(&self, rng: &mut RandomSource) -> bool {
        self.p > 0.0 && rng.flip(self.p)
    }
}

/// Randomized one-hot histogram payload; `bits.len()` equals the configured
/// domain width `m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObhPayload {
    pub bits: Vec<bool>,
}

impl ObhPayload {
    pub fn m(&self) -> u32 {
        self.bits.len() as u32
    }
}

/// Randomized sketch-row payload: one row index in `[0, k)` plus the
/// randomized one-hot of the datum's hash in that row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CmsPayload {
    pub row_index: u32,
    pub bits: Vec<bool>,
}

impl CmsPayload {
    pub fn m(&self) -> u32 {
        self.bits.len() as u32
    }
}

/// Flip each bit of `bits` independently with the coin's probability.
///
/// Flip positions are drawn by geometric skipping (the gap between flips is
/// Geometric(p)), which yields the same i.i.d. Bernoulli marginals as a
/// per-bit draw in O(expected flips) instead of O(m).
fn apply_bit_flips(bits: &mut [bool], coin: &BiasedCoin, rng: &mut RandomSource) {
    let p = coin.probability();
    if p <= 0.0 {
        return;
    }
    let len = bits.len() as u64;
    let ln_keep = libm::log(1.0 - p);
    let mut index: u64 = 0;
    loop {
        // u in (0, 1] so log(u) is finite.
        let u = 1.0 - rng.next_f64();
        let gap = libm::floor(libm::log(u) / ln_keep);
        // Casts saturate, so absurdly large gaps simply terminate the loop.
        index = index.saturating_add(gap as u64);
        if index >= len {
            return;
        }
        bits[index as usize] = !bits[index as usize];
        index += 1;
    }
}

fn randomized_one_hot(
    hot: u32,
    m: u32,
    coin: &BiasedCoin,
    rng: &mut RandomSource,
) -> Result<Vec<bool>, PrivatizeError> {
    if hot >= m {
        return Err(PrivatizeError::BucketOutOfRange { bucket: hot, m });
    }
    let mut bits = vec![false; m as usize];
    bits[hot as usize] = true;
    apply_bit_flips(&mut bits, coin, rng);
    Ok(bits)
}

pub fn privatize_obh(
    bucket: u32,
    m: u32,
    epsilon: f64,
    rng: &mut RandomSource,
) -> Result<ObhPayload, PrivatizeError> {
    privatize_obh_with_coin(bucket, m, &BiasedCoin::from_epsilon(epsilon)?, rng)
}

pub fn privatize_obh_with_coin(
    bucket: u32,
    m: u32,
    coin: &BiasedCoin,
    rng: &mut RandomSource,
) -> Result<ObhPayload, PrivatizeError> {
    Ok(ObhPayload {
        bits: randomized_one_hot(bucket, m, coin, rng)?,
    })
}

/// Hash a datum into `[0, m)` for sketch row `row`.
///
/// FNV-1a over the row index (little-endian) followed by the datum bytes,
/// finished with a splitmix64 avalanche. Seed-independent and fixed forever;
/// the collector must hash candidates identically.
pub fn hash_datum(datum: &str, row: u32, m: u32) -> u32 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = FNV_OFFSET;
    for byte in row.to_le_bytes() {
        hash = (hash ^ u64::from(byte)).wrapping_mul(FNV_PRIME);
    }
    for byte in datum.as_bytes() {
        hash = (hash ^ u64::from(*byte)).wrapping_mul(FNV_PRIME);
    }
    (splitmix64(hash) % u64::from(m)) as u32
}

pub fn privatize_cms(
    datum: &str,
    epsilon: f64,
    k: u32,
    m: u32,
    rng: &mut RandomSource,
) -> Result<CmsPayload, PrivatizeError> {
    privatize_cms_with_coin(datum, &BiasedCoin::from_epsilon(epsilon)?, k, m, rng)
}

pub fn privatize_cms_with_coin(
    datum: &str,
    coin: &BiasedCoin,
    k: u32,
    m: u32,
    rng: &mut RandomSource,
) -> Result<CmsPayload, PrivatizeError> {
    if datum.is_empty() {
        return Err(PrivatizeError::EmptyDatum);
    }
    let row_index = rng.below(k);
    let hot = hash_datum(datum, row_index, m);
    Ok(CmsPayload {
        row_index,
        bits: randomized_one_hot(hot, m, coin, rng)?,
    })
}
