//! Server-side aggregation and frequency estimation.
//!
//! Ingests report files and inverts the randomized response to estimate
//! per-bucket counts (histograms) or per-candidate counts (sketches). With
//! flip probability `p` and `n` reports, a bucket observed `c` times has
//! unbiased count estimate `(c - n*p) / (1 - 2p)`.
//!
//! Sketch estimation additionally corrects for row sampling: each report
//! lands in one of `k` rows chosen uniformly, so a per-row estimate is
//! scaled by `k` before taking the median across rows (hence count-median).

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::config::Algorithm;
use crate::privatizer::{coin_probability, hash_datum, PrivatizeError};
use crate::report::{decode_payload, ReportFile};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimateError {
    #[error("epsilon 0 makes the coin symmetric; counts cannot be debiased")]
    DegenerateCoin,
    #[error("candidate parameters do not match the aggregate dimensions")]
    DimensionMismatch,
    #[error(transparent)]
    Privatize(#[from] PrivatizeError),
}

/// Summed histogram payloads for one key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateObh {
    pub key_name: String,
    pub epsilon: f64,
    pub m: u32,
    /// Reports ingested.
    pub n: u64,
    /// Per-bucket set-bit counts; `counts[i] <= n`.
    pub counts: Vec<u64>,
}

/// Summed sketch payloads for one key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCms {
    pub key_name: String,
    pub epsilon: f64,
    pub m: u32,
    pub k: u32,
    pub n: u64,
    /// `matrix[row][bucket]`: set-bit counts per row.
    pub matrix: Vec<Vec<u64>>,
    /// Reports observed per row; sums to `n`.
    pub rows_seen: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Aggregate {
    Obh(AggregateObh),
    Cms(AggregateCms),
}

impl Aggregate {
    pub fn key_name(&self) -> &str {
        match self {
            Aggregate::Obh(a) => &a.key_name,
            Aggregate::Cms(a) => &a.key_name,
        }
    }

    pub fn n(&self) -> u64 {
        match self {
            Aggregate::Obh(a) => a.n,
            Aggregate::Cms(a) => a.n,
        }
    }
}

/// Aggregates per key name plus a count of rejected entries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub aggregates: BTreeMap<String, Aggregate>,
    pub malformed: u64,
}

impl IngestSummary {
    pub fn obh(&self, key_name: &str) -> Option<&AggregateObh> {
        match self.aggregates.get(key_name) {
            Some(Aggregate::Obh(a)) => Some(a),
            _ => None,
        }
    }

    pub fn cms(&self, key_name: &str) -> Option<&AggregateCms> {
        match self.aggregates.get(key_name) {
            Some(Aggregate::Cms(a)) => Some(a),
            _ => None,
        }
    }
}

/// Fold report files into per-key aggregates. Entries that fail validation
/// (bad payload, wrong dimensions, parameters conflicting with earlier
/// entries for the same key) are skipped and counted; aggregation is
/// order-independent.
pub fn ingest<'a>(files: impl IntoIterator<Item = &'a ReportFile>) -> IngestSummary {
    let mut summary = IngestSummary::default();
    for file in files {
        for entry in &file.entries {
            if ingest_entry(&mut summary.aggregates, entry).is_none() {
                summary.malformed += 1;
            }
        }
    }
    summary
}

fn ingest_entry(
    aggregates: &mut BTreeMap<String, Aggregate>,
    entry: &crate::report::ReportEntry,
) -> Option<()> {
    if entry.m < 2 {
        return None;
    }
    let bits = decode_payload(&entry.payload, entry.m as usize)?;
    match entry.algorithm {
        Algorithm::OneBitHistogram => {
            if entry.row_index.is_some() || entry.k.is_some() {
                return None;
            }
            let aggregate = aggregates
                .entry(entry.key_name.clone())
                .or_insert_with(|| {
                    Aggregate::Obh(AggregateObh {
                        key_name: entry.key_name.clone(),
                        epsilon: entry.epsilon,
                        m: entry.m,
                        n: 0,
                        counts: alloc::vec![0; entry.m as usize],
                    })
                });
            let Aggregate::Obh(agg) = aggregate else {
                return None;
            };
            if agg.m != entry.m || agg.epsilon != entry.epsilon {
                return None;
            }
            agg.n += 1;
            for (count, bit) in agg.counts.iter_mut().zip(&bits) {
                *count += u64::from(*bit);
            }
        }
        Algorithm::CountMedianSketch => {
            let k = entry.k?;
            let row = entry.row_index?;
            if k == 0 || row >= k {
                return None;
            }
            let aggregate = aggregates
                .entry(entry.key_name.clone())
                .or_insert_with(|| {
                    Aggregate::Cms(AggregateCms {
                        key_name: entry.key_name.clone(),
                        epsilon: entry.epsilon,
                        m: entry.m,
                        k,
                        n: 0,
                        matrix: alloc::vec![alloc::vec![0; entry.m as usize]; k as usize],
                        rows_seen: alloc::vec![0; k as usize],
                    })
                });
            let Aggregate::Cms(agg) = aggregate else {
                return None;
            };
            if agg.m != entry.m || agg.k != k || agg.epsilon != entry.epsilon {
                return None;
            }
            agg.n += 1;
            agg.rows_seen[row as usize] += 1;
            for (count, bit) in agg.matrix[row as usize].iter_mut().zip(&bits) {
                *count += u64::from(*bit);
            }
        }
    }
    Some(())
}

/// Debiased per-bucket count estimates for a histogram aggregate.
pub fn estimate_obh(agg: &AggregateObh, epsilon: f64) -> Result<Vec<f64>, EstimateError> {
    let p = coin_probability(epsilon)?;
    if 1.0 - 2.0 * p <= 0.0 {
        return Err(EstimateError::DegenerateCoin);
    }
    let n = agg.n as f64;
    Ok(agg
        .counts
        .iter()
        .map(|&count| (count as f64 - n * p) / (1.0 - 2.0 * p))
        .collect())
}

/// Count-median estimates for each candidate string.
///
/// Per row `j`: debias the candidate's hash bucket, scale by `k` for row
/// sampling, then take the median across rows.
pub fn estimate_cms(
    agg: &AggregateCms,
    candidates: &[String],
    epsilon: f64,
    k: u32,
    m: u32,
) -> Result<BTreeMap<String, f64>, EstimateError> {
    if agg.k != k || agg.m != m {
        return Err(EstimateError::DimensionMismatch);
    }
    let p = coin_probability(epsilon)?;
    if 1.0 - 2.0 * p <= 0.0 {
        return Err(EstimateError::DegenerateCoin);
    }
    let mut estimates = BTreeMap::new();
    for candidate in candidates {
        let mut per_row: Vec<f64> = (0..k)
            .map(|row| {
                let bucket = hash_datum(candidate, row, m) as usize;
                let seen = agg.rows_seen[row as usize] as f64;
                let count = agg.matrix[row as usize][bucket] as f64;
                f64::from(k) * (count - seen * p) / (1.0 - 2.0 * p)
            })
            .collect();
        estimates.insert(candidate.clone(), median(&mut per_row));
    }
    Ok(estimates)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("estimates are finite"));
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    }
}
