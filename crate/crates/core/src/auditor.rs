//! Privacy-loss accounting.
//!
//! Bounds are computed from configuration alone by linear (sequential)
//! composition: each budget key permits `epsilon * SessionAmount` of loss
//! per SessionSeconds, where epsilon is the largest effective privacy
//! parameter among the KeyNames feeding that budget key. Realized loss is
//! the sum of the effective epsilons of records actually submitted, taken
//! from the append-only [`LossLedger`] the daemon writes.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, ConfigBundle, ConfigError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AuditError {
    #[error("unknown budget key {0:?}")]
    UnknownBudgetKey(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// One submitted record's contribution to realized loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossEntry {
    pub at: u64,
    pub key_name: String,
    pub budget_key_name: String,
    pub epsilon: f64,
}

/// Append-only log of the epsilon of every record ever submitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossLedger {
    entries: Vec<LossEntry>,
}

impl LossLedger {
    pub fn append(&mut self, entry: LossEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[LossEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Loss bound for one budget key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub budget_key_name: String,
    /// Largest effective epsilon among KeyNames feeding this budget key;
    /// zero when no KeyName does.
    pub epsilon_per_datum: f64,
    pub session_amount: u32,
    pub session_seconds: u64,
    /// epsilon * SessionAmount, in the key's native session unit.
    pub session_loss: f64,
    /// Session loss normalized to a per-day rate.
    pub per_day_loss: f64,
}

/// Session-loss bounds over a scope of budget keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rows: Vec<LossRow>,
    /// Sum of per-day rates over the scope. Keys with non-daily sessions
    /// contribute their normalized rate.
    pub total_per_day: f64,
}

/// Effective epsilon actually used for one KeyName's records.
pub fn per_datum_loss(bundle: &ConfigBundle, key_name: &str) -> Result<f64, AuditError> {
    Ok(bundle.resolve(key_name)?.effective_epsilon)
}

fn budget_epsilon(bundle: &ConfigBundle, budget_key_name: &str) -> f64 {
    bundle
        .key_names()
        .filter_map(|key| bundle.resolve(key).ok())
        .filter(|resolved| resolved.budget_key_name == budget_key_name)
        .map(|resolved| resolved.effective_epsilon)
        .fold(0.0, f64::max)
}

/// Per-session loss bound for each budget key in `scope`.
pub fn session_loss_bound(
    bundle: &ConfigBundle,
    scope: &BTreeSet<String>,
) -> Result<LossReport, AuditError> {
    let mut rows = Vec::with_capacity(scope.len());
    let mut total_per_day = 0.0;
    for budget_key_name in scope {
        let entry = bundle
            .budget_entry(budget_key_name)
            .ok_or_else(|| AuditError::UnknownBudgetKey(budget_key_name.clone()))?;
        let epsilon = budget_epsilon(bundle, budget_key_name);
        let session_loss = epsilon * f64::from(entry.session_amount);
        let per_day_loss = session_loss * 86_400.0 / entry.session_seconds as f64;
        total_per_day += per_day_loss;
        rows.push(LossRow {
            budget_key_name: budget_key_name.clone(),
            epsilon_per_datum: epsilon,
            session_amount: entry.session_amount,
            session_seconds: entry.session_seconds,
            session_loss,
            per_day_loss,
        });
    }
    Ok(LossReport {
        rows,
        total_per_day,
    })
}

/// Loss permitted over `days` days: each key accrues its session loss once
/// per SessionSeconds, so the total is the per-day rate times the day count.
/// Unused allowance rolls over indefinitely, so nothing caps this.
pub fn lifetime_loss_bound(
    bundle: &ConfigBundle,
    scope: &BTreeSet<String>,
    days: u64,
) -> Result<f64, AuditError> {
    let report = session_loss_bound(bundle, scope)?;
    Ok(report
        .rows
        .iter()
        .map(|row| row.session_loss * (days as f64 * 86_400.0 / row.session_seconds as f64))
        .sum())
}

/// Realized loss: sum of submitted epsilons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizedLoss {
    pub total: f64,
    pub per_budget_key: BTreeMap<String, f64>,
}

/// Sum ledger entries with `at >= since`.
pub fn realized_loss(ledger: &LossLedger, since: u64) -> RealizedLoss {
    let mut per_budget_key: BTreeMap<String, f64> = BTreeMap::new();
    let mut total = 0.0;
    for entry in ledger.entries() {
        if entry.at >= since {
            total += entry.epsilon;
            *per_budget_key.entry(entry.budget_key_name.clone()).or_insert(0.0) += entry.epsilon;
        }
    }
    RealizedLoss {
        total,
        per_budget_key,
    }
}

/// One observed difference between two profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DiffChange {
    KeyNameAdded { key_name: String },
    KeyNameRemoved { key_name: String },
    KeyNameRemapped { key_name: String, from: String, to: String },
    PropertiesAdded { properties_name: String },
    PropertiesRemoved { properties_name: String },
    AlgorithmChanged { properties_name: String, from: Algorithm, to: Algorithm },
    EpsilonChanged { properties_name: String, from: f64, to: f64 },
    BudgetKeyChanged { properties_name: String, from: String, to: String },
    BudgetAdded { budget_key_name: String },
    BudgetRemoved { budget_key_name: String },
    SessionAmountChanged { budget_key_name: String, from: u32, to: u32 },
    SessionSecondsChanged { budget_key_name: String, from: u64, to: u64 },
    AlgorithmParamsChanged { algorithm: Algorithm, from: (u32, u32), to: (u32, u32) },
    PrioritySupportChanged { from: bool, to: bool },
}

/// Differences between two profiles, with the loss impact per budget key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileDiff {
    pub changes: Vec<DiffChange>,
    /// budget key -> (per-day loss before, per-day loss after).
    pub per_budget_delta: BTreeMap<String, (f64, f64)>,
    /// Change in total per-day loss bound across all budget keys.
    pub total_delta: f64,
}

impl ProfileDiff {
    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }
}

/// Enumerate configuration changes from `before` to `after` and their
/// effect on the session-loss bounds.
pub fn diff_profiles(before: &ConfigBundle, after: &ConfigBundle) -> ProfileDiff {
    let mut changes = Vec::new();

    for (key_name, props) in before.key_name_entries() {
        match after
            .key_name_entries()
            .find(|(k, _)| *k == key_name)
            .map(|(_, p)| p)
        {
            None => changes.push(DiffChange::KeyNameRemoved {
                key_name: key_name.to_string(),
            }),
            Some(other) if other != props => changes.push(DiffChange::KeyNameRemapped {
                key_name: key_name.to_string(),
                from: props.to_string(),
                to: other.to_string(),
            }),
            Some(_) => {}
        }
    }
    for (key_name, _) in after.key_name_entries() {
        if !before.contains_key_name(key_name) {
            changes.push(DiffChange::KeyNameAdded {
                key_name: key_name.to_string(),
            });
        }
    }

    for props in before.properties_entries() {
        match after.properties_entry(&props.properties_name) {
            None => changes.push(DiffChange::PropertiesRemoved {
                properties_name: props.properties_name.clone(),
            }),
            Some(other) => {
                if other.algorithm != props.algorithm {
                    changes.push(DiffChange::AlgorithmChanged {
                        properties_name: props.properties_name.clone(),
                        from: props.algorithm,
                        to: other.algorithm,
                    });
                }
                if other.privacy_parameter != props.privacy_parameter {
                    changes.push(DiffChange::EpsilonChanged {
                        properties_name: props.properties_name.clone(),
                        from: props.privacy_parameter,
                        to: other.privacy_parameter,
                    });
                }
                if other.budget_key_name != props.budget_key_name {
                    changes.push(DiffChange::BudgetKeyChanged {
                        properties_name: props.properties_name.clone(),
                        from: props.budget_key_name.clone(),
                        to: other.budget_key_name.clone(),
                    });
                }
            }
        }
    }
    for props in after.properties_entries() {
        if before.properties_entry(&props.properties_name).is_none() {
            changes.push(DiffChange::PropertiesAdded {
                properties_name: props.properties_name.clone(),
            });
        }
    }

    for entry in before.budget_entries() {
        match after.budget_entry(&entry.budget_key_name) {
            None => changes.push(DiffChange::BudgetRemoved {
                budget_key_name: entry.budget_key_name.clone(),
            }),
            Some(other) => {
                if other.session_amount != entry.session_amount {
                    changes.push(DiffChange::SessionAmountChanged {
                        budget_key_name: entry.budget_key_name.clone(),
                        from: entry.session_amount,
                        to: other.session_amount,
                    });
                }
                if other.session_seconds != entry.session_seconds {
                    changes.push(DiffChange::SessionSecondsChanged {
                        budget_key_name: entry.budget_key_name.clone(),
                        from: entry.session_seconds,
                        to: other.session_seconds,
                    });
                }
            }
        }
    }
    for entry in after.budget_entries() {
        if before.budget_entry(&entry.budget_key_name).is_none() {
            changes.push(DiffChange::BudgetAdded {
                budget_key_name: entry.budget_key_name.clone(),
            });
        }
    }

    for params in before.algorithm_params_entries() {
        if let Some(other) = after.algorithm_params(params.algorithm) {
            if (other.m, other.k) != (params.m, params.k) {
                changes.push(DiffChange::AlgorithmParamsChanged {
                    algorithm: params.algorithm,
                    from: (params.m, params.k),
                    to: (other.m, other.k),
                });
            }
        }
    }

    if before.supports_submission_priority() != after.supports_submission_priority() {
        changes.push(DiffChange::PrioritySupportChanged {
            from: before.supports_submission_priority(),
            to: after.supports_submission_priority(),
        });
    }

    let mut per_budget_delta = BTreeMap::new();
    let mut total_delta = 0.0;
    let all_keys: BTreeSet<String> = before
        .budget_key_names()
        .union(&after.budget_key_names())
        .cloned()
        .collect();
    for key in all_keys {
        let rate = |bundle: &ConfigBundle| -> f64 {
            let scope = BTreeSet::from([key.clone()]);
            session_loss_bound(bundle, &scope)
                .map(|report| report.total_per_day)
                .unwrap_or(0.0)
        };
        let (from, to) = (rate(before), rate(after));
        if from != to {
            per_budget_delta.insert(key, (from, to));
        }
        total_delta += to - from;
    }

    ProfileDiff {
        changes,
        per_budget_delta,
        total_delta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{AlgorithmParams, BudgetEntry, KeyNameEntry, PropertiesEntry};
    use alloc::vec;

    fn bundle(newwords_amount: u32, emoji_epsilon: f64) -> ConfigBundle {
        ConfigBundle::new(
            "t",
            vec![
                KeyNameEntry {
                    key_name: "words.en".into(),
                    properties_name: "Words".into(),
                },
                KeyNameEntry {
                    key_name: "emoji.en".into(),
                    properties_name: "Emoji".into(),
                },
            ],
            vec![
                PropertiesEntry {
                    properties_name: "Words".into(),
                    algorithm: Algorithm::CountMedianSketch,
                    privacy_parameter: 2.0,
                    budget_key_name: "b.words".into(),
                    submission_priority: Some(0),
                },
                PropertiesEntry {
                    properties_name: "Emoji".into(),
                    algorithm: Algorithm::OneBitHistogram,
                    privacy_parameter: emoji_epsilon,
                    budget_key_name: "b.emoji".into(),
                    submission_priority: Some(0),
                },
            ],
            vec![
                BudgetEntry {
                    budget_key_name: "b.words".into(),
                    session_seconds: 86_400,
                    session_amount: newwords_amount,
                },
                BudgetEntry {
                    budget_key_name: "b.emoji".into(),
                    session_seconds: 86_400,
                    session_amount: 1,
                },
            ],
            vec![
                AlgorithmParams {
                    algorithm: Algorithm::CountMedianSketch,
                    m: 16,
                    k: 4,
                },
                AlgorithmParams {
                    algorithm: Algorithm::OneBitHistogram,
                    m: 8,
                    k: 1,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn session_bound_multiplies_epsilon_by_amount() {
        let bundle = bundle(2, 1.0);
        let scope = BTreeSet::from(["b.words".to_string(), "b.emoji".to_string()]);
        let report = session_loss_bound(&bundle, &scope).unwrap();
        assert_eq!(report.total_per_day, 5.0); // 2*2 + 1*1
        let words = report
            .rows
            .iter()
            .find(|r| r.budget_key_name == "b.words")
            .unwrap();
        assert_eq!(words.session_loss, 4.0);
    }

    #[test]
    fn unknown_scope_key_rejected() {
        let bundle = bundle(2, 1.0);
        let scope = BTreeSet::from(["b.nope".to_string()]);
        assert!(matches!(
            session_loss_bound(&bundle, &scope),
            Err(AuditError::UnknownBudgetKey(_))
        ));
    }

    #[test]
    fn lifetime_bound_scales_with_days() {
        let bundle = bundle(2, 1.0);
        let scope = BTreeSet::from(["b.words".to_string(), "b.emoji".to_string()]);
        assert_eq!(lifetime_loss_bound(&bundle, &scope, 0).unwrap(), 0.0);
        assert_eq!(lifetime_loss_bound(&bundle, &scope, 30).unwrap(), 150.0);
    }

    #[test]
    fn realized_loss_sums_entries_since() {
        let mut ledger = LossLedger::default();
        for (at, epsilon) in [(10, 1.0), (20, 1.0), (30, 2.0)] {
            ledger.append(LossEntry {
                at,
                key_name: "k".into(),
                budget_key_name: "b".into(),
                epsilon,
            });
        }
        assert_eq!(realized_loss(&ledger, 0).total, 4.0);
        assert_eq!(realized_loss(&ledger, 15).total, 3.0);
        assert_eq!(realized_loss(&ledger, 31).total, 0.0);
        assert_eq!(realized_loss(&ledger, 0).per_budget_key["b"], 4.0);
    }

    #[test]
    fn identical_bundles_diff_empty() {
        let a = bundle(2, 1.0);
        let diff = diff_profiles(&a, &a.clone());
        assert!(diff.is_empty());
        assert_eq!(diff.total_delta, 0.0);
        assert!(diff.per_budget_delta.is_empty());
    }

    #[test]
    fn diff_reports_amount_change_with_loss_impact() {
        let old = bundle(1, 1.0);
        let new = bundle(2, 1.0);
        let diff = diff_profiles(&old, &new);
        assert_eq!(
            diff.changes,
            vec![DiffChange::SessionAmountChanged {
                budget_key_name: "b.words".into(),
                from: 1,
                to: 2,
            }]
        );
        assert_eq!(diff.per_budget_delta["b.words"], (2.0, 4.0));
        assert_eq!(diff.total_delta, 2.0);
    }

    #[test]
    fn diff_is_antisymmetric_in_loss_delta() {
        let old = bundle(1, 1.0);
        let new = bundle(2, 2.0);
        let forward = diff_profiles(&old, &new);
        let backward = diff_profiles(&new, &old);
        assert_eq!(forward.total_delta, -backward.total_delta);
    }

    #[test]
    fn clamped_epsilon_does_not_inflate_bound() {
        let sane = bundle(2, 2.0);
        let greedy = bundle(2, 5.0); // clamps to effective epsilon 1
        let scope = BTreeSet::from(["b.emoji".to_string()]);
        let sane_bound = session_loss_bound(&sane, &scope).unwrap().total_per_day;
        let greedy_bound = session_loss_bound(&greedy, &scope).unwrap().total_per_day;
        assert!(greedy_bound <= sane_bound);
        assert_eq!(greedy_bound, 1.0);
    }

    #[test]
    fn unreferenced_budget_key_has_zero_bound() {
        let bundle = ConfigBundle::new(
            "t",
            vec![],
            vec![],
            vec![BudgetEntry {
                budget_key_name: "b.idle".into(),
                session_seconds: 86_400,
                session_amount: 4,
            }],
            vec![],
        )
        .unwrap();
        let scope = BTreeSet::from(["b.idle".to_string()]);
        let report = session_loss_bound(&bundle, &scope).unwrap();
        assert_eq!(report.total_per_day, 0.0);
    }
}
