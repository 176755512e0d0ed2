//! Coordinator configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::CoordinatorError;
use crate::semantics::AdjudicatorConfig;

/// Which adjudicator implementation backs semantic matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdjudicatorKind {
    #[default]
    Lexical,
    /// External process speaking JSON on stdin/stdout; same contract as
    /// the lexical default.
    Command {
        command: String,
        #[serde(default)]
        args: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoordinatorConfig {
    /// Transport bind address for service mode, e.g. "127.0.0.1:7310".
    pub bind: Option<String>,
    /// Minimum fractional entropy reduction for convergence.
    pub tau: f64,
    /// Clarification round budget per negotiation epoch.
    pub n_max: u32,
    /// Admission threshold over blended scores (inclusive).
    pub admission_threshold: f64,
    /// Weight of semantic suitability versus the outcome prior.
    pub alpha: f64,
    /// Smoothing factor for prior updates.
    pub prior_smoothing: f64,
    /// Renegotiation cycles allowed before dissolution.
    pub renegotiation_cap: u32,
    /// Recursive-simplification attempts before solidification.
    pub simplify_max: u32,
    pub policy_path: Option<PathBuf>,
    pub ontology_path: Option<PathBuf>,
    pub audit_dir: Option<PathBuf>,
    pub prior_store_path: Option<PathBuf>,
    pub adjudicator: AdjudicatorKind,
    pub challenge_ttl_ms: i64,
    pub token_ttl_ms: i64,
    /// Latency budget used to normalize step latencies into prior signals.
    pub latency_budget_ticks: u64,
    /// Offer lifetime attached to coordinator plan proposals.
    pub proposal_ttl_ms: i64,
    /// Dissolve automatically once execution completes.
    pub auto_dissolve_completed: bool,
    /// Hex seed fixing the coordinator identity; harness runs derive it
    /// from the scenario seed, service mode generates one when absent.
    pub coordinator_seed: Option<String>,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        CoordinatorConfig {
            bind: None,
            tau: 0.5,
            n_max: 5,
            admission_threshold: 0.5,
            alpha: 0.7,
            prior_smoothing: 0.2,
            renegotiation_cap: 2,
            simplify_max: 2,
            policy_path: None,
            ontology_path: None,
            audit_dir: None,
            prior_store_path: None,
            adjudicator: AdjudicatorKind::Lexical,
            challenge_ttl_ms: 60_000,
            token_ttl_ms: 3_600_000,
            latency_budget_ticks: 100,
            proposal_ttl_ms: 600_000,
            auto_dissolve_completed: true,
            coordinator_seed: None,
        }
    }
}

impl CoordinatorConfig {
    pub fn adjudicator_config(&self) -> AdjudicatorConfig {
        AdjudicatorConfig {
            admission_threshold: self.admission_threshold,
            alpha: self.alpha,
            prior_smoothing: self.prior_smoothing,
        }
    }

    pub fn validate(&self) -> Result<(), CoordinatorError> {
        if !self.tau.is_finite() || self.tau <= 0.0 || self.tau >= 1.0 {
            return Err(CoordinatorError::Config(format!("tau {} out of (0,1)", self.tau)));
        }
        if self.n_max < 1 {
            return Err(CoordinatorError::Config("n_max must be at least 1".into()));
        }
        self.adjudicator_config()
            .validate()
            .map_err(CoordinatorError::Semantics)?;
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, CoordinatorError> {
        let config: CoordinatorConfig =
            toml::from_str(s).map_err(|e| CoordinatorError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CoordinatorError> {
        let data = std::fs::read_to_string(path)
            .map_err(|e| CoordinatorError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        CoordinatorConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_partial_toml() {
        let config = CoordinatorConfig::from_toml_str(
            r#"
            tau = 0.9
            n_max = 3
            [adjudicator]
            kind = "lexical"
            "#,
        )
        .unwrap();
        assert_eq!(config.tau, 0.9);
        assert_eq!(config.n_max, 3);
        assert_eq!(config.renegotiation_cap, 2);
    }

    #[test]
    fn rejects_bad_tau() {
        assert!(CoordinatorConfig::from_toml_str("tau = 1.5").is_err());
    }
}
