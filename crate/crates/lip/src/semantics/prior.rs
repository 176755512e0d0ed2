//! Outcome priors: per-capability scalar performance history.
//!
//! Priors stay advisory. They are blended into suitability with weight
//! `1 − alpha`, initialized neutrally at 0.5 so an agent with no history
//! is never auto-excluded, and they are the one artifact that survives
//! dissolution (learning is exempt from residual-coupling accounting).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adjudicator::AdjudicatorConfig;
use super::SemanticsError;
use crate::protocol::canonical::to_canonical_string;

/// Neutral prior assigned to capabilities with no recorded outcomes.
pub const INITIAL_RHO: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomePrior {
    pub capability_id: String,
    pub rho: f64,
    pub observations: u64,
    pub last_update: i64,
}

impl OutcomePrior {
    pub fn fresh(capability_id: impl Into<String>, now: i64) -> Self {
        OutcomePrior {
            capability_id: capability_id.into(),
            rho: INITIAL_RHO,
            observations: 0,
            last_update: now,
        }
    }
}

/// Indicators folded into one outcome value: the mean of whichever are
/// available. Consistency and coherence scores are externally supplied.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSignal {
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency_score: Option<f64>,
}

impl OutcomeSignal {
    pub fn value(&self) -> f64 {
        let mut sum = if self.success { 1.0 } else { 0.0 };
        let mut n = 1.0;
        for extra in [self.latency_score, self.consistency_score].into_iter().flatten() {
            sum += extra.clamp(0.0, 1.0);
            n += 1.0;
        }
        sum / n
    }
}

/// Map raw latency to a score in [0,1]: full marks at zero latency,
/// linearly down to zero at `budget` ticks or beyond.
pub fn latency_score(latency_ticks: u64, budget_ticks: u64) -> f64 {
    if budget_ticks == 0 {
        return 0.0;
    }
    (1.0 - latency_ticks as f64 / budget_ticks as f64).clamp(0.0, 1.0)
}

/// Exponential update toward the observed outcome:
/// `rho' = (1 − lambda)·rho + lambda·outcome`.
pub fn update_prior(
    prior: &OutcomePrior,
    outcome: f64,
    config: &AdjudicatorConfig,
    now: i64,
) -> Result<OutcomePrior, SemanticsError> {
    if !outcome.is_finite() || !(0.0..=1.0).contains(&outcome) {
        return Err(SemanticsError::OutOfRange {
            name: "outcome".to_string(),
            value: outcome,
        });
    }
    config.validate()?;
    let lambda = config.prior_smoothing;
    Ok(OutcomePrior {
        capability_id: prior.capability_id.clone(),
        rho: ((1.0 - lambda) * prior.rho + lambda * outcome).clamp(0.0, 1.0),
        observations: prior.observations + 1,
        last_update: now,
    })
}

/// Store of priors keyed by capability id, persisted as an
/// append-compacted line file: updates are appended as canonical JSON
/// lines, loads keep the last record per key, and `compact` rewrites one
/// line per capability.
#[derive(Debug, Default)]
pub struct PriorStore {
    entries: BTreeMap<String, OutcomePrior>,
    path: Option<PathBuf>,
}

impl PriorStore {
    pub fn in_memory() -> Self {
        PriorStore::default()
    }

    /// Open (or create) a store backed by the given file.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, SemanticsError> {
        let path = path.into();
        let mut entries = BTreeMap::new();
        if path.exists() {
            let data = fs::read_to_string(&path)
                .map_err(|e| SemanticsError::Store(format!("{}: {e}", path.display())))?;
            for (lineno, line) in data.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let prior: OutcomePrior = serde_json::from_str(line).map_err(|e| {
                    SemanticsError::Store(format!("{} line {}: {e}", path.display(), lineno + 1))
                })?;
                entries.insert(prior.capability_id.clone(), prior);
            }
        }
        Ok(PriorStore {
            entries,
            path: Some(path),
        })
    }

    pub fn rho(&self, capability_id: &str) -> f64 {
        self.entries
            .get(capability_id)
            .map(|p| p.rho)
            .unwrap_or(INITIAL_RHO)
    }

    pub fn get(&self, capability_id: &str) -> Option<&OutcomePrior> {
        self.entries.get(capability_id)
    }

    /// Apply one outcome observation and append it to the backing file.
    pub fn record(
        &mut self,
        capability_id: &str,
        outcome: f64,
        config: &AdjudicatorConfig,
        now: i64,
    ) -> Result<OutcomePrior, SemanticsError> {
        let current = self
            .entries
            .get(capability_id)
            .cloned()
            .unwrap_or_else(|| OutcomePrior::fresh(capability_id, now));
        let updated = update_prior(&current, outcome, config, now)?;
        self.entries.insert(capability_id.to_string(), updated.clone());
        if let Some(path) = &self.path {
            let line = to_canonical_string(&updated)
                .map_err(|e| SemanticsError::Store(e.to_string()))?;
            let mut file = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| SemanticsError::Store(format!("{}: {e}", path.display())))?;
            writeln!(file, "{line}")
                .map_err(|e| SemanticsError::Store(format!("{}: {e}", path.display())))?;
        }
        Ok(updated)
    }

    /// Rewrite the backing file with one line per capability.
    pub fn compact(&self) -> Result<(), SemanticsError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut body = String::new();
        for prior in self.entries.values() {
            body.push_str(
                &to_canonical_string(prior).map_err(|e| SemanticsError::Store(e.to_string()))?,
            );
            body.push('\n');
        }
        write_atomically(path, body.as_bytes())
            .map_err(|e| SemanticsError::Store(format!("{}: {e}", path.display())))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn write_atomically(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(lambda: f64) -> AdjudicatorConfig {
        AdjudicatorConfig {
            prior_smoothing: lambda,
            ..AdjudicatorConfig::default()
        }
    }

    #[test]
    fn outcome_equal_to_rho_is_a_fixed_point() {
        let prior = OutcomePrior {
            capability_id: "c".into(),
            rho: 0.37,
            observations: 4,
            last_update: 0,
        };
        let updated = update_prior(&prior, 0.37, &config(0.2), 1).unwrap();
        assert!((updated.rho - 0.37).abs() < 1e-12);
        assert_eq!(updated.observations, 5);
    }

    #[test]
    fn smoothing_arithmetic() {
        let prior = OutcomePrior {
            capability_id: "c".into(),
            rho: 0.5,
            observations: 0,
            last_update: 0,
        };
        let updated = update_prior(&prior, 1.0, &config(0.2), 1).unwrap();
        assert!((updated.rho - 0.6).abs() < 1e-12);
    }

    #[test]
    fn repeated_success_converges_monotonically() {
        let mut prior = OutcomePrior::fresh("c", 0);
        let mut last = prior.rho;
        for i in 0..50 {
            prior = update_prior(&prior, 1.0, &config(0.2), i).unwrap();
            assert!(prior.rho >= last);
            assert!(prior.rho <= 1.0);
            last = prior.rho;
        }
        assert!(prior.rho > 0.999);
    }

    #[test]
    fn out_of_range_outcome_rejected() {
        let prior = OutcomePrior::fresh("c", 0);
        assert!(update_prior(&prior, 1.5, &config(0.2), 1).is_err());
    }

    #[test]
    fn store_appends_and_compacts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("priors.jsonl");
        {
            let mut store = PriorStore::open(&path).unwrap();
            store.record("cap", 1.0, &config(0.5), 10).unwrap();
            store.record("cap", 1.0, &config(0.5), 20).unwrap();
            store.record("other", 0.0, &config(0.5), 30).unwrap();
        }
        // Three appended lines, last-one-wins on load.
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 3);
        let store = PriorStore::open(&path).unwrap();
        assert!((store.rho("cap") - 0.875).abs() < 1e-12);
        assert!((store.rho("other") - 0.25).abs() < 1e-12);
        assert_eq!(store.rho("unknown"), INITIAL_RHO);

        store.compact().unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 2);
        let reloaded = PriorStore::open(&path).unwrap();
        assert!((reloaded.rho("cap") - 0.875).abs() < 1e-12);
    }

    #[test]
    fn outcome_signal_mean() {
        let s = OutcomeSignal {
            success: true,
            latency_score: Some(0.5),
            consistency_score: None,
        };
        assert!((s.value() - 0.75).abs() < 1e-12);
        let bare = OutcomeSignal {
            success: false,
            ..OutcomeSignal::default()
        };
        assert_eq!(bare.value(), 0.0);
    }
}
