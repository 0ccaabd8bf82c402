use ldpd_core::config::{
    Algorithm, AlgorithmParams, BudgetEntry, ConfigBundle, KeyNameEntry, PropertiesEntry,
};

/// Small bundle shared by the integration suites: one histogram key, one
/// sketch key, one over-budget key, plus an idle weekly budget.
pub fn small_bundle() -> ConfigBundle {
    ConfigBundle::new(
        "integration",
        vec![
            KeyNameEntry {
                key_name: "emoji.en".into(),
                properties_name: "Emoji".into(),
            },
            KeyNameEntry {
                key_name: "words.en".into(),
                properties_name: "Words".into(),
            },
            KeyNameEntry {
                key_name: "greedy".into(),
                properties_name: "Greedy".into(),
            },
            KeyNameEntry {
                key_name: "health".into(),
                properties_name: "Health".into(),
            },
        ],
        vec![
            PropertiesEntry {
                properties_name: "Emoji".into(),
                algorithm: Algorithm::OneBitHistogram,
                privacy_parameter: 1.0,
                budget_key_name: "budget.emoji".into(),
                submission_priority: Some(0),
            },
            PropertiesEntry {
                properties_name: "Words".into(),
                algorithm: Algorithm::CountMedianSketch,
                privacy_parameter: 2.0,
                budget_key_name: "budget.words".into(),
                submission_priority: Some(0),
            },
            PropertiesEntry {
                properties_name: "Greedy".into(),
                algorithm: Algorithm::OneBitHistogram,
                privacy_parameter: 7.5,
                budget_key_name: "budget.emoji".into(),
                submission_priority: Some(0),
            },
            PropertiesEntry {
                properties_name: "Health".into(),
                algorithm: Algorithm::OneBitHistogram,
                privacy_parameter: 1.0,
                budget_key_name: "budget.health".into(),
                submission_priority: Some(0),
            },
        ],
        vec![
            BudgetEntry {
                budget_key_name: "budget.emoji".into(),
                session_seconds: 86_400,
                session_amount: 1,
            },
            BudgetEntry {
                budget_key_name: "budget.words".into(),
                session_seconds: 86_400,
                session_amount: 2,
            },
            BudgetEntry {
                budget_key_name: "budget.health".into(),
                session_seconds: 604_800,
                session_amount: 2,
            },
        ],
        vec![
            AlgorithmParams {
                algorithm: Algorithm::OneBitHistogram,
                m: 8,
                k: 1,
            },
            AlgorithmParams {
                algorithm: Algorithm::CountMedianSketch,
                m: 16,
                k: 4,
            },
        ],
    )
    .unwrap()
}
