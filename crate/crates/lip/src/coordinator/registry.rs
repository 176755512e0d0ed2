//! Runtime capability registry.

use std::collections::BTreeMap;

use super::CoordinatorError;
use crate::semantics::Capability;

/// Capabilities declared by enrolled agents, discoverable at adjudication
/// time. Registration is visible to subsequent adjudications only.
#[derive(Debug, Default)]
pub struct CapabilityRegistry {
    entries: BTreeMap<String, BTreeMap<String, Capability>>,
    updated_at: BTreeMap<String, i64>,
}

impl CapabilityRegistry {
    pub fn new() -> Self {
        CapabilityRegistry::default()
    }

    pub fn register(&mut self, capability: Capability, now: i64) -> Result<String, CoordinatorError> {
        capability.validate().map_err(CoordinatorError::Semantics)?;
        let owner = capability.owner.clone();
        let id = capability.capability_id.clone();
        let owned = self.entries.entry(owner.clone()).or_default();
        if owned.contains_key(&id) {
            return Err(CoordinatorError::DuplicateCapability { capability_id: id });
        }
        owned.insert(id.clone(), capability);
        self.updated_at.insert(owner, now);
        Ok(id)
    }

    pub fn remove_agent(&mut self, agent_id: &str) {
        self.entries.remove(agent_id);
        self.updated_at.remove(agent_id);
    }

    /// All registered capabilities, ordered by owner then capability id.
    pub fn all(&self) -> Vec<Capability> {
        self.entries
            .values()
            .flat_map(|owned| owned.values().cloned())
            .collect()
    }

    pub fn capability(&self, capability_id: &str) -> Option<&Capability> {
        self.entries
            .values()
            .find_map(|owned| owned.get(capability_id))
    }

    pub fn owner_of(&self, capability_id: &str) -> Option<&str> {
        self.capability(capability_id).map(|c| c.owner.as_str())
    }

    pub fn capabilities_of(&self, agent_id: &str) -> Vec<&Capability> {
        self.entries
            .get(agent_id)
            .map(|owned| owned.values().collect())
            .unwrap_or_default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.values().all(|owned| owned.is_empty())
    }
}
