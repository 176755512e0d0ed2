//! Declared capabilities and contextual state.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::SemanticsError;

/// A capability an agent exposes for discovery and adjudication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capability {
    pub capability_id: String,
    /// Fingerprint of the owning agent.
    pub owner: String,
    /// Natural-language description used by the lexical adjudicator.
    pub description: String,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    /// Authorization scopes this capability exercises when executed.
    #[serde(default)]
    pub declared_scopes: BTreeSet<String>,
    /// Constraint keys the capability can satisfy.
    #[serde(default)]
    pub constraint_domain: BTreeSet<String>,
}

impl Capability {
    pub fn validate(&self) -> Result<(), SemanticsError> {
        if self.capability_id.trim().is_empty() {
            return Err(SemanticsError::InvalidCapability("empty capability_id".into()));
        }
        if self.description.trim().is_empty() {
            return Err(SemanticsError::InvalidCapability(format!(
                "capability {} has an empty description",
                self.capability_id
            )));
        }
        Ok(())
    }
}

/// Snapshot of contextual facts available at adjudication time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextState {
    #[serde(default)]
    pub facts: BTreeMap<String, Value>,
    #[serde(default)]
    pub snapshot_time: i64,
}

impl ContextState {
    /// Copy of the context with `private:`-prefixed facts removed; this is
    /// what gets broadcast to capability owners.
    pub fn redacted(&self) -> ContextState {
        ContextState {
            facts: self
                .facts
                .iter()
                .filter(|(k, _)| !k.starts_with("private:"))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            snapshot_time: self.snapshot_time,
        }
    }
}
