//! Privacy-budget bookkeeping shared by the private baselines.

use serde::{Deserialize, Serialize};

/// One line of a privacy-budget ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetEntry {
    pub release: String,
    pub epsilon: f64,
    pub delta: f64,
}

impl BudgetEntry {
    pub fn new(release: impl Into<String>, epsilon: f64, delta: f64) -> Self {
        BudgetEntry {
            release: release.into(),
            epsilon,
            delta,
        }
    }
}

/// Total `(epsilon, delta)` of a ledger under basic composition.
pub fn total_budget(entries: &[BudgetEntry]) -> (f64, f64) {
    entries
        .iter()
        .fold((0.0, 0.0), |(e, d), b| (e + b.epsilon, d + b.delta))
}
