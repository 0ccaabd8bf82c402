//! Verification helpers shared by the test suites: randomized operation
//! sequences, an independent budget-conservation oracle, and small
//! statistical utilities for the Monte Carlo checks.
//!
//! Nothing here is needed at runtime; it ships in the library so that unit,
//! property, and acceptance tests all replay the same generators and
//! oracles. Failures carry the offending seed for replay.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::config::{Algorithm, ConfigBundle};
use crate::daemon::{Pipeline, PipelineOptions};
use crate::privatizer::BiasedCoin;
use crate::rng::RandomSource;
use crate::store::EventDatum;

/// One scripted operation against a pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum OpStep {
    Event { key_name: String, datum: EventDatum },
    Advance { seconds: u64 },
    Cull,
    Maintain,
}

/// A bounded, seeded interleaving of events, time advances, and direct
/// maintenance triggers. Time only moves forward.
#[derive(Debug, Clone, PartialEq)]
pub struct OpSequence {
    pub seed: u64,
    pub steps: Vec<OpStep>,
}

/// Generate a random operation sequence over the bundle's key space.
/// Word datums repeat deliberately so the seen-words dedup path runs.
pub fn generate_sequence(bundle: &ConfigBundle, seed: u64, len: usize) -> OpSequence {
    let mut rng = RandomSource::from_seed(seed);
    let keys: Vec<&str> = bundle.key_names().collect();
    let mut steps = Vec::with_capacity(len);
    for _ in 0..len {
        let step = match rng.below(10) {
            0..=5 if !keys.is_empty() => {
                let key_name = keys[rng.below_usize(keys.len())].to_string();
                let resolved = bundle.resolve(&key_name).expect("key from bundle");
                let datum = match resolved.algorithm {
                    Algorithm::OneBitHistogram => EventDatum::Bucket(rng.below(resolved.m)),
                    Algorithm::CountMedianSketch => {
                        EventDatum::Word(format!("w{}", rng.below(50)))
                    }
                };
                OpStep::Event { key_name, datum }
            }
            6 | 7 => OpStep::Advance {
                seconds: u64::from(rng.below(3 * 86_400)),
            },
            8 => OpStep::Cull,
            _ => OpStep::Maintain,
        };
        steps.push(step);
    }
    OpSequence { seed, steps }
}

/// A broken conservation invariant, with enough context to replay it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConservationViolation {
    pub seed: u64,
    pub step: usize,
    pub budget_key_name: String,
    pub detail: String,
}

impl core::fmt::Display for ConservationViolation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "seed {} step {} budget {}: {}",
            self.seed, self.step, self.budget_key_name, self.detail
        )
    }
}

/// Replay `seq` from an opt-in at time zero and assert, after every step,
/// that each budget key satisfies the ledger identity
///
/// `balance = accrued - submitted`
///
/// where `accrued` is computed independently of the store: the opt-in
/// allowance plus SessionAmount per whole SessionSeconds covered by the
/// budget-maintenance runs so far (which fire at whole days from opt-in).
pub fn check_budget_conservation(
    seq: &OpSequence,
    bundle: &ConfigBundle,
    seed: u64,
) -> Result<(), ConservationViolation> {
    let mut pipeline = Pipeline::opt_in(bundle.clone(), PipelineOptions::default(), seed, 0);
    for (step, op) in seq.steps.iter().enumerate() {
        match op {
            OpStep::Event { key_name, datum } => {
                pipeline
                    .submit_event(key_name, datum)
                    .expect("generated events are valid");
            }
            OpStep::Advance { seconds } => {
                pipeline.advance(*seconds).expect("virtual time is monotone");
            }
            OpStep::Cull => {
                pipeline.store_mut().storage_culling();
            }
            OpStep::Maintain => {
                let now = pipeline.now();
                pipeline.store_mut().storage_maintenance(now);
            }
        }
        verify_conservation(&pipeline, seed, step)?;
    }
    Ok(())
}

fn verify_conservation(
    pipeline: &Pipeline,
    seed: u64,
    step: usize,
) -> Result<(), ConservationViolation> {
    // Budget maintenance fires at whole days from opt-in; the last run was
    // at the start of the current day.
    let day_start = (pipeline.now() / 86_400) * 86_400;
    let mut submitted: BTreeMap<&str, u64> = BTreeMap::new();
    for entry in pipeline.ledger().entries() {
        *submitted.entry(&entry.budget_key_name).or_insert(0) += 1;
    }
    for entry in pipeline.bundle().budget_entries() {
        let key = entry.budget_key_name.as_str();
        let accrued =
            u64::from(entry.session_amount) * (1 + day_start / entry.session_seconds);
        let spent = submitted.get(key).copied().unwrap_or(0);
        let balance = pipeline
            .store()
            .budget(key)
            .expect("budget row exists")
            .balance;
        if spent > accrued {
            return Err(ConservationViolation {
                seed,
                step,
                budget_key_name: key.to_string(),
                detail: format!("submitted {spent} exceeds accrued budget {accrued}"),
            });
        }
        if balance != accrued - spent {
            return Err(ConservationViolation {
                seed,
                step,
                budget_key_name: key.to_string(),
                detail: format!(
                    "balance {balance} != accrued {accrued} - submitted {spent}"
                ),
            });
        }
    }
    Ok(())
}

/// An empirical rate outside its acceptance band.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsViolation {
    pub expected: f64,
    pub observed: f64,
    pub sigma: f64,
    pub band_sigmas: f64,
}

impl core::fmt::Display for StatsViolation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "observed {} vs expected {} (sigma {}, band {} sigmas)",
            self.observed, self.expected, self.sigma, self.band_sigmas
        )
    }
}

/// Flip a coin `trials` times and require the empirical rate within four
/// binomial sigmas of `1/(exp(epsilon)+1)`. Returns the observed rate.
pub fn check_flip_statistics(
    epsilon: f64,
    trials: u64,
    seed: u64,
) -> Result<f64, StatsViolation> {
    let coin = BiasedCoin::from_epsilon(epsilon).expect("epsilon is non-negative");
    let mut rng = RandomSource::from_seed(seed);
    let mut flips = 0u64;
    for _ in 0..trials {
        if coin.flip(&mut rng) {
            flips += 1;
        }
    }
    let observed = flips as f64 / trials as f64;
    let expected = coin.probability();
    let sigma = binomial_sigma(trials, expected);
    if libm::fabs(observed - expected) <= 4.0 * sigma {
        Ok(observed)
    } else {
        Err(StatsViolation {
            expected,
            observed,
            sigma,
            band_sigmas: 4.0,
        })
    }
}

pub fn binomial_sigma(trials: u64, p: f64) -> f64 {
    libm::sqrt(p * (1.0 - p) / trials as f64)
}

/// Pearson chi-square statistic against expected cell counts.
pub fn chi_square_statistic(observed: &[u64], expected: &[f64]) -> f64 {
    observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| {
            let d = o as f64 - e;
            d * d / e
        })
        .sum()
}

/// Wilson-Hilferty approximation of the chi-square quantile at `z` normal
/// sigmas (z = 3.09 approximates the 0.999 quantile). Adequate for the
/// generous acceptance bands used in the statistical tests.
pub fn chi_square_critical(df: u32, z: f64) -> f64 {
    let df = f64::from(df);
    let t = 2.0 / (9.0 * df);
    df * libm::pow(1.0 - t + z * libm::sqrt(t), 3.0)
}
