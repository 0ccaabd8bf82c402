//! Configuration bundle and key resolution.
//!
//! Four configuration documents describe the telemetry key space:
//! `keynames` maps a KeyName (one datum type, e.g.
//! `com.apple.keyboard.NewWords.ru_RU`) to a PropertiesName; `keyproperties`
//! gives each PropertiesName its privatization algorithm, privacy parameter
//! and BudgetKeyName; `algorithmparameters` carries the histogram/sketch
//! dimensions; `budgetproperties` gives each BudgetKeyName its session
//! length and per-session record allowance. A [`ConfigBundle`] is the merged,
//! cross-checked form of the four, and [`ConfigBundle::resolve`] chains a
//! KeyName through all of them, applying the runtime abuse clamps on the way.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// Runtime ceiling on the privacy parameter; mirrors a constant baked into
/// the daemon binary rather than read from configuration.
pub const EPSILON_MAX: f64 = 2.0;
/// Privacy parameter substituted when a configured value exceeds
/// [`EPSILON_MAX`].
pub const CLAMPED_EPSILON: f64 = 1.0;
/// Submission priority assigned to clamped records. Selection orders by
/// ascending priority and refuses this value outright, so such records are
/// never submitted.
pub const CLAMPED_PRIORITY: u32 = 99_999;
/// Priority for ordinary records when the profile does not specify one.
pub const DEFAULT_PRIORITY: u32 = 0;
/// Hard per-KeyName cap on records per report, regardless of SessionAmount.
pub const RECORD_CAP: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    OneBitHistogram,
    CountMedianSketch,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::OneBitHistogram => "OneBitHistogram",
            Algorithm::CountMedianSketch => "CountMedianSketch",
        }
    }
}

impl core::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// One row of the `keynames` document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyNameEntry {
    pub key_name: String,
    pub properties_name: String,
}

/// One row of the `keyproperties` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertiesEntry {
    pub properties_name: String,
    pub algorithm: Algorithm,
    pub privacy_parameter: f64,
    pub budget_key_name: String,
    /// Default submission priority for records of this properties class.
    /// Absent in older profiles; its presence is surfaced by profile diffs.
    pub submission_priority: Option<u32>,
}

/// One row of the `budgetproperties` document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetEntry {
    pub budget_key_name: String,
    /// Replenishment interval in seconds (86 400 daily, 604 800 weekly).
    pub session_seconds: u64,
    /// Records per session and per-interval budget increment.
    pub session_amount: u32,
}

/// One row of the `algorithmparameters` document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlgorithmParams {
    pub algorithm: Algorithm,
    /// Histogram / sketch width.
    pub m: u32,
    /// Number of sketch hash rows; 1 for OneBitHistogram.
    pub k: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("key name {key_name:?} maps to undefined properties name {properties_name:?}")]
    MissingProperties {
        key_name: String,
        properties_name: String,
    },
    #[error("properties {properties_name:?} references undefined budget key {budget_key_name:?}")]
    MissingBudget {
        properties_name: String,
        budget_key_name: String,
    },
    #[error("malformed configuration: {0}")]
    MalformedDocument(String),
    #[error("unknown key name {0:?}")]
    UnknownKeyName(String),
    #[error("privacy parameter must be positive, got {0}")]
    NonPositiveEpsilon(f64),
}

/// The four configuration documents merged into a resolvable key map.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigBundle {
    profile_name: String,
    key_names: BTreeMap<String, String>,
    properties: BTreeMap<String, PropertiesEntry>,
    budgets: BTreeMap<String, BudgetEntry>,
    algorithm_params: BTreeMap<Algorithm, AlgorithmParams>,
    epsilon_max: f64,
    record_cap: u32,
}

/// Fully resolved view of one KeyName, with runtime clamps applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedKey {
    pub key_name: String,
    pub properties_name: String,
    pub algorithm: Algorithm,
    /// Privacy parameter actually used for privatization (post-clamp).
    pub effective_epsilon: f64,
    pub submission_priority: u32,
    pub budget_key_name: String,
    /// min(SessionAmount, record cap): max records of this KeyName per report.
    pub session_amount_effective: u32,
    pub m: u32,
    pub k: u32,
}

impl ConfigBundle {
    /// Merge the four parsed documents, checking every cross-reference.
    pub fn new(
        profile_name: impl Into<String>,
        key_names: Vec<KeyNameEntry>,
        properties: Vec<PropertiesEntry>,
        budgets: Vec<BudgetEntry>,
        algorithm_params: Vec<AlgorithmParams>,
    ) -> Result<Self, ConfigError> {
        let mut budget_map = BTreeMap::new();
        for entry in budgets {
            if entry.session_seconds == 0 {
                return Err(ConfigError::MalformedDocument(format!(
                    "budget {:?} has SessionSeconds 0",
                    entry.budget_key_name
                )));
            }
            if entry.session_amount == 0 {
                return Err(ConfigError::MalformedDocument(format!(
                    "budget {:?} has SessionAmount 0",
                    entry.budget_key_name
                )));
            }
            if budget_map
                .insert(entry.budget_key_name.clone(), entry)
                .is_some()
            {
                return Err(ConfigError::MalformedDocument(
                    "duplicate budget key name".to_string(),
                ));
            }
        }

        let mut params_map = BTreeMap::new();
        for params in algorithm_params {
            if params.m < 2 {
                return Err(ConfigError::MalformedDocument(format!(
                    "{} parameter m must be at least 2, got {}",
                    params.algorithm, params.m
                )));
            }
            if params.k == 0 {
                return Err(ConfigError::MalformedDocument(format!(
                    "{} parameter k must be at least 1",
                    params.algorithm
                )));
            }
            params_map.insert(params.algorithm, params);
        }

        let mut properties_map = BTreeMap::new();
        for entry in properties {
            if !entry.privacy_parameter.is_finite() || entry.privacy_parameter <= 0.0 {
                return Err(ConfigError::NonPositiveEpsilon(entry.privacy_parameter));
            }
            if !budget_map.contains_key(&entry.budget_key_name) {
                return Err(ConfigError::MissingBudget {
                    properties_name: entry.properties_name.clone(),
                    budget_key_name: entry.budget_key_name.clone(),
                });
            }
            if !params_map.contains_key(&entry.algorithm) {
                return Err(ConfigError::MalformedDocument(format!(
                    "no algorithm parameters for {}",
                    entry.algorithm
                )));
            }
            properties_map.insert(entry.properties_name.clone(), entry);
        }

        let mut key_map = BTreeMap::new();
        for entry in key_names {
            if !properties_map.contains_key(&entry.properties_name) {
                return Err(ConfigError::MissingProperties {
                    key_name: entry.key_name,
                    properties_name: entry.properties_name,
                });
            }
            if key_map
                .insert(entry.key_name.clone(), entry.properties_name)
                .is_some()
            {
                return Err(ConfigError::MalformedDocument(format!(
                    "duplicate key name {:?}",
                    entry.key_name
                )));
            }
        }

        Ok(Self {
            profile_name: profile_name.into(),
            key_names: key_map,
            properties: properties_map,
            budgets: budget_map,
            algorithm_params: params_map,
            epsilon_max: EPSILON_MAX,
            record_cap: RECORD_CAP,
        })
    }

    pub fn profile_name(&self) -> &str {
        &self.profile_name
    }

    pub fn epsilon_max(&self) -> f64 {
        self.epsilon_max
    }

    pub fn record_cap(&self) -> u32 {
        self.record_cap
    }

    /// Clamp a configured privacy parameter against the hardcoded ceiling.
    ///
    /// Values above the ceiling fall back to [`CLAMPED_EPSILON`] and mark the
    /// record with [`CLAMPED_PRIORITY`] so it is never submitted.
    pub fn clamp_epsilon(&self, requested: f64) -> Result<(f64, u32), ConfigError> {
        if !requested.is_finite() || requested <= 0.0 {
            return Err(ConfigError::NonPositiveEpsilon(requested));
        }
        if requested > self.epsilon_max {
            Ok((CLAMPED_EPSILON, CLAMPED_PRIORITY))
        } else {
            Ok((requested, DEFAULT_PRIORITY))
        }
    }

    /// Per-KeyName record cap for one report: min(SessionAmount, 40).
    pub fn effective_record_cap(&self, session_amount: u32) -> u32 {
        session_amount.min(self.record_cap)
    }

    /// Chain KeyName -> PropertiesName -> (algorithm, epsilon, budget key),
    /// applying the epsilon clamp and the record cap.
    pub fn resolve(&self, key_name: &str) -> Result<ResolvedKey, ConfigError> {
        let properties_name = self
            .key_names
            .get(key_name)
            .ok_or_else(|| ConfigError::UnknownKeyName(key_name.to_string()))?;
        let props = &self.properties[properties_name];
        let budget = &self.budgets[&props.budget_key_name];
        let params = &self.algorithm_params[&props.algorithm];

        let (effective_epsilon, clamp_priority) = self.clamp_epsilon(props.privacy_parameter)?;
        let submission_priority = if clamp_priority == CLAMPED_PRIORITY {
            CLAMPED_PRIORITY
        } else {
            props.submission_priority.unwrap_or(DEFAULT_PRIORITY)
        };

        Ok(ResolvedKey {
            key_name: key_name.to_string(),
            properties_name: properties_name.clone(),
            algorithm: props.algorithm,
            effective_epsilon,
            submission_priority,
            budget_key_name: props.budget_key_name.clone(),
            session_amount_effective: self.effective_record_cap(budget.session_amount),
            m: params.m,
            k: params.k,
        })
    }

    pub fn contains_key_name(&self, key_name: &str) -> bool {
        self.key_names.contains_key(key_name)
    }

    pub fn key_names(&self) -> impl Iterator<Item = &str> {
        self.key_names.keys().map(String::as_str)
    }

    pub fn key_name_entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.key_names
            .iter()
            .map(|(k, p)| (k.as_str(), p.as_str()))
    }

    pub fn properties_entries(&self) -> impl Iterator<Item = &PropertiesEntry> {
        self.properties.values()
    }

    pub fn properties_entry(&self, properties_name: &str) -> Option<&PropertiesEntry> {
        self.properties.get(properties_name)
    }

    pub fn budget_entries(&self) -> impl Iterator<Item = &BudgetEntry> {
        self.budgets.values()
    }

    pub fn budget_entry(&self, budget_key_name: &str) -> Option<&BudgetEntry> {
        self.budgets.get(budget_key_name)
    }

    pub fn budget_key_names(&self) -> BTreeSet<String> {
        self.budgets.keys().cloned().collect()
    }

    pub fn algorithm_params(&self, algorithm: Algorithm) -> Option<&AlgorithmParams> {
        self.algorithm_params.get(&algorithm)
    }

    pub fn algorithm_params_entries(&self) -> impl Iterator<Item = &AlgorithmParams> {
        self.algorithm_params.values()
    }

    /// Whether any properties entry carries an explicit SubmissionPriority;
    /// older profiles predate the field.
    pub fn supports_submission_priority(&self) -> bool {
        self.properties
            .values()
            .any(|p| p.submission_priority.is_some())
    }
}
