//! Privatized-record storage and the privacy-budget ledger.
//!
//! The store holds everything the daemon persists between task runs: the
//! table of privatized records awaiting submission, one budget row per
//! BudgetKeyName, and the set of words already privatized. All mutation goes
//! through the daemon's serialized task queue; the store itself never does
//! IO.
//!
//! Note on the seen-words set: words are kept in the clear, mirroring the
//! original system's behavior of privatizing only first occurrences. This
//! reproduces a known weakness (presence of a word is testable by whoever
//! reads the store), and is documented as such rather than fixed.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, ConfigBundle};
use crate::privatizer::{self, CmsPayload, ObhPayload, PrivatizeError};
use crate::rng::RandomSource;

/// Records older than this are removed by storage maintenance.
pub const RECORD_MAX_AGE_SECONDS: u64 = 14 * 86_400;
/// Default cap on the record table size.
pub const DEFAULT_MAX_RECORDS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StoreError {
    #[error("unknown key name {0:?}")]
    UnknownKeyName(String),
    #[error("key {key_name:?} uses {algorithm} and expects a {expected} datum")]
    WrongDatumKind {
        key_name: String,
        algorithm: Algorithm,
        expected: &'static str,
    },
    #[error("clock went backwards: now {now} < last update {last_update}")]
    ClockWentBackwards { now: u64, last_update: u64 },
    #[error(transparent)]
    Privatize(#[from] PrivatizeError),
}

/// Perturbed payload of one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    Obh(ObhPayload),
    Cms(CmsPayload),
}

impl Payload {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            Payload::Obh(_) => Algorithm::OneBitHistogram,
            Payload::Cms(_) => Algorithm::CountMedianSketch,
        }
    }

    pub fn bits(&self) -> &[bool] {
        match self {
            Payload::Obh(p) => &p.bits,
            Payload::Cms(p) => &p.bits,
        }
    }

    pub fn row_index(&self) -> Option<u32> {
        match self {
            Payload::Obh(_) => None,
            Payload::Cms(p) => Some(p.row_index),
        }
    }
}

/// One perturbed datum plus submission metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivatizedRecord {
    pub record_id: u64,
    pub key_name: String,
    pub payload: Payload,
    /// Privacy parameter actually used (post-clamp).
    pub epsilon: f64,
    pub creation_date: u64,
    pub submitted: bool,
    pub submission_priority: u32,
    pub version: String,
}

/// Per-BudgetKeyName ledger row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetRecord {
    pub budget_key_name: String,
    pub balance: u64,
    pub last_update: u64,
    pub creation_date: u64,
}

/// The datum for one telemetry event: a histogram bucket for
/// OneBitHistogram keys, a word for CountMedianSketch keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventDatum {
    Bucket(u32),
    Word(String),
}

/// What happened to a submitted event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventOutcome {
    Stored { record_id: u64, clamped: bool },
    /// Sketch-class word already privatized earlier; no new record.
    AlreadySeen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Store {
    records: Vec<PrivatizedRecord>,
    budgets: BTreeMap<String, BudgetRecord>,
    seen: BTreeSet<(String, String)>,
    pub current_version: String,
    pub max_records: usize,
    next_record_id: u64,
}

impl Store {
    /// Create the store at opt-in time: one budget row per BudgetKeyName,
    /// initialized with its SessionAmount, and an empty record table.
    pub fn opt_in(bundle: &ConfigBundle, now: u64) -> Self {
        let budgets = bundle
            .budget_entries()
            .map(|entry| {
                (
                    entry.budget_key_name.clone(),
                    BudgetRecord {
                        budget_key_name: entry.budget_key_name.clone(),
                        balance: u64::from(entry.session_amount),
                        last_update: now,
                        creation_date: now,
                    },
                )
            })
            .collect();
        Self {
            records: Vec::new(),
            budgets,
            seen: BTreeSet::new(),
            current_version: bundle.profile_name().to_string(),
            max_records: DEFAULT_MAX_RECORDS,
            next_record_id: 1,
        }
    }

    pub fn records(&self) -> &[PrivatizedRecord] {
        &self.records
    }

    pub fn record(&self, record_id: u64) -> Option<&PrivatizedRecord> {
        self.records.iter().find(|r| r.record_id == record_id)
    }

    pub fn budgets(&self) -> impl Iterator<Item = &BudgetRecord> {
        self.budgets.values()
    }

    pub fn budget(&self, budget_key_name: &str) -> Option<&BudgetRecord> {
        self.budgets.get(budget_key_name)
    }

    /// Overwrite a budget balance. The real ledger is equally exposed to
    /// anyone with root on the device; tests use this to set up scenarios.
    pub fn set_balance(&mut self, budget_key_name: &str, balance: u64) -> bool {
        match self.budgets.get_mut(budget_key_name) {
            Some(row) => {
                row.balance = balance;
                true
            }
            None => false,
        }
    }

    pub fn seen_word_count(&self) -> usize {
        self.seen.len()
    }

    pub fn unsubmitted_count(&self) -> usize {
        self.records.iter().filter(|r| !r.submitted).count()
    }

    /// Privatize one event and append it to the record table.
    ///
    /// Histogram-class events always produce a record; sketch-class events
    /// produce one only the first time a (key name, word) pair is seen.
    /// A configured epsilon above the runtime ceiling is clamped and the
    /// record poisoned with the never-submit priority, but it is still
    /// routed by its configured algorithm.
    pub fn submit_event(
        &mut self,
        bundle: &ConfigBundle,
        key_name: &str,
        datum: &EventDatum,
        now: u64,
        rng: &mut RandomSource,
    ) -> Result<EventOutcome, StoreError> {
        let resolved = bundle
            .resolve(key_name)
            .map_err(|_| StoreError::UnknownKeyName(key_name.to_string()))?;

        let payload = match (resolved.algorithm, datum) {
            (Algorithm::OneBitHistogram, EventDatum::Bucket(bucket)) => Payload::Obh(
                privatizer::privatize_obh(*bucket, resolved.m, resolved.effective_epsilon, rng)?,
            ),
            (Algorithm::CountMedianSketch, EventDatum::Word(word)) => {
                let seen_key = (key_name.to_string(), word.clone());
                if self.seen.contains(&seen_key) {
                    return Ok(EventOutcome::AlreadySeen);
                }
                let payload = privatizer::privatize_cms(
                    word,
                    resolved.effective_epsilon,
                    resolved.k,
                    resolved.m,
                    rng,
                )?;
                self.seen.insert(seen_key);
                Payload::Cms(payload)
            }
            (algorithm @ Algorithm::OneBitHistogram, EventDatum::Word(_)) => {
                return Err(StoreError::WrongDatumKind {
                    key_name: key_name.to_string(),
                    algorithm,
                    expected: "bucket index",
                })
            }
            (algorithm @ Algorithm::CountMedianSketch, EventDatum::Bucket(_)) => {
                return Err(StoreError::WrongDatumKind {
                    key_name: key_name.to_string(),
                    algorithm,
                    expected: "word",
                })
            }
        };

        let record_id = self.next_record_id;
        self.next_record_id += 1;
        let clamped = resolved.submission_priority == crate::config::CLAMPED_PRIORITY;
        self.records.push(PrivatizedRecord {
            record_id,
            key_name: key_name.to_string(),
            payload,
            epsilon: resolved.effective_epsilon,
            creation_date: now,
            submitted: false,
            submission_priority: resolved.submission_priority,
            version: self.current_version.clone(),
        });
        Ok(EventOutcome::Stored { record_id, clamped })
    }

    /// Credit every budget row with SessionAmount per whole SessionSeconds
    /// elapsed since its last update. Multi-interval gaps (OS sleep, long
    /// idle stretches) are caught up in one call.
    ///
    /// Returns the per-key increments, zero entries included.
    pub fn update_all_budgets(
        &mut self,
        bundle: &ConfigBundle,
        now: u64,
    ) -> Result<Vec<(String, u64)>, StoreError> {
        for row in self.budgets.values() {
            if now < row.last_update {
                return Err(StoreError::ClockWentBackwards {
                    now,
                    last_update: row.last_update,
                });
            }
        }
        let mut increments = Vec::with_capacity(self.budgets.len());
        for (name, row) in self.budgets.iter_mut() {
            let Some(entry) = bundle.budget_entry(name) else {
                continue;
            };
            let intervals = (now - row.last_update) / entry.session_seconds;
            let increment = intervals * u64::from(entry.session_amount);
            if intervals > 0 {
                row.balance += increment;
                row.last_update += intervals * entry.session_seconds;
            }
            increments.push((name.clone(), increment));
        }
        Ok(increments)
    }

    /// Remove submitted records and records from a different version.
    pub fn storage_culling(&mut self) -> usize {
        let before = self.records.len();
        let version = self.current_version.clone();
        self.records
            .retain(|r| !r.submitted && r.version == version);
        before - self.records.len()
    }

    /// Remove records older than two weeks, then trim the table oldest-first
    /// down to `max_records`.
    pub fn storage_maintenance(&mut self, now: u64) -> usize {
        let before = self.records.len();
        self.records
            .retain(|r| now.saturating_sub(r.creation_date) <= RECORD_MAX_AGE_SECONDS);
        if self.records.len() > self.max_records {
            let excess = self.records.len() - self.max_records;
            let mut order: Vec<(u64, u64)> = self
                .records
                .iter()
                .map(|r| (r.creation_date, r.record_id))
                .collect();
            order.sort_unstable();
            let doomed: BTreeSet<u64> = order[..excess].iter().map(|&(_, id)| id).collect();
            self.records.retain(|r| !doomed.contains(&r.record_id));
        }
        before - self.records.len()
    }

    /// Set every balance to floor((last_update - creation_date) / 86400),
    /// reproducing an observed anomalous reset. Only reachable when the
    /// pipeline is run with the reset enabled.
    pub fn anomalous_budget_reset(&mut self) -> Vec<(String, u64)> {
        let mut updated = Vec::with_capacity(self.budgets.len());
        for (name, row) in self.budgets.iter_mut() {
            row.balance = (row.last_update - row.creation_date) / 86_400;
            updated.push((name.clone(), row.balance));
        }
        updated
    }

    pub(crate) fn mark_submitted(&mut self, record_ids: &BTreeSet<u64>) {
        for record in self.records.iter_mut() {
            if record_ids.contains(&record.record_id) {
                record.submitted = true;
            }
        }
    }

    /// Decrease a balance by an amount already validated against it.
    pub(crate) fn spend(&mut self, budget_key_name: &str, amount: u64) {
        let row = self
            .budgets
            .get_mut(budget_key_name)
            .expect("spend against unknown budget key");
        row.balance = row
            .balance
            .checked_sub(amount)
            .expect("spend exceeds balance");
    }
}
