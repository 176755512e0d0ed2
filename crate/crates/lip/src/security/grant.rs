//! Interaction-bound authorization grants.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::policy::{Claim, Policy, ScopeDecision};
use super::SecurityError;
use crate::protocol::IntentPayload;
use crate::semantics::ContextState;

/// Scopes granted to one agent for the lifetime of one interaction;
/// revoked at dissolution, never reusable across interactions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorizationGrant {
    pub grant_id: String,
    pub interaction_id: String,
    pub agent_id: String,
    pub scopes: BTreeSet<String>,
    pub granted_at: i64,
    pub revoked: bool,
}

/// Store of grants with an index per interaction.
#[derive(Debug, Default)]
pub struct GrantStore {
    grants: BTreeMap<String, AuthorizationGrant>,
    by_interaction: BTreeMap<String, Vec<String>>,
    seq: u64,
}

impl GrantStore {
    pub fn new() -> Self {
        GrantStore::default()
    }

    /// Evaluate claims against policy and mint a grant for the allowed
    /// scopes. An empty allowed set is an authorization denial carrying
    /// the per-scope reasons.
    pub fn evaluate_and_issue(
        &mut self,
        claims: &[Claim],
        intent: &IntentPayload,
        context: &ContextState,
        policy: &Policy,
        interaction_id: &str,
        agent_id: &str,
        now: i64,
    ) -> Result<(AuthorizationGrant, Vec<ScopeDecision>), SecurityError> {
        let decisions = policy.evaluate_claims(claims, intent, context);
        let allowed: BTreeSet<String> = decisions
            .iter()
            .filter(|d| d.allowed)
            .map(|d| d.scope.clone())
            .collect();
        if allowed.is_empty() {
            return Err(SecurityError::AuthorizationDenied {
                reasons: decisions
                    .iter()
                    .map(|d| (d.scope.clone(), d.reason.clone()))
                    .collect(),
            });
        }
        let grant = self.issue(interaction_id, agent_id, allowed, now);
        Ok((grant, decisions))
    }

    pub fn issue(
        &mut self,
        interaction_id: &str,
        agent_id: &str,
        scopes: BTreeSet<String>,
        now: i64,
    ) -> AuthorizationGrant {
        self.seq += 1;
        let grant = AuthorizationGrant {
            grant_id: format!("g-{}", self.seq),
            interaction_id: interaction_id.to_string(),
            agent_id: agent_id.to_string(),
            scopes,
            granted_at: now,
            revoked: false,
        };
        self.grants.insert(grant.grant_id.clone(), grant.clone());
        self.by_interaction
            .entry(interaction_id.to_string())
            .or_default()
            .push(grant.grant_id.clone());
        grant
    }

    /// Revoke every grant bound to the interaction; returns the number
    /// newly revoked (zero on a repeat call).
    pub fn revoke_interaction_grants(&mut self, interaction_id: &str) -> usize {
        let Some(ids) = self.by_interaction.get(interaction_id) else {
            return 0;
        };
        let mut revoked = 0;
        for id in ids {
            if let Some(grant) = self.grants.get_mut(id) {
                if !grant.revoked {
                    grant.revoked = true;
                    revoked += 1;
                }
            }
        }
        revoked
    }

    /// True iff the agent holds an unrevoked grant for this interaction
    /// covering the scope.
    pub fn check_scope(&self, agent_id: &str, interaction_id: &str, scope: &str) -> bool {
        self.grants_for_interaction(interaction_id).any(|g| {
            !g.revoked && g.agent_id == agent_id && g.scopes.contains(scope)
        })
    }

    pub fn grants_for_interaction(
        &self,
        interaction_id: &str,
    ) -> impl Iterator<Item = &AuthorizationGrant> {
        self.by_interaction
            .get(interaction_id)
            .into_iter()
            .flatten()
            .filter_map(|id| self.grants.get(id))
    }

    pub fn live_grants_for_interaction(&self, interaction_id: &str) -> usize {
        self.grants_for_interaction(interaction_id)
            .filter(|g| !g.revoked)
            .count()
    }

    /// Unrevoked grants held by `agent_id` on `interaction_id`.
    pub fn live_grants_for(&self, agent_id: &str, interaction_id: &str) -> usize {
        self.grants_for_interaction(interaction_id)
            .filter(|g| !g.revoked && g.agent_id == agent_id)
            .count()
    }

    pub fn get(&self, grant_id: &str) -> Option<&AuthorizationGrant> {
        self.grants.get(grant_id)
    }

    pub fn all(&self) -> impl Iterator<Item = &AuthorizationGrant> {
        self.grants.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::security::policy::{Effect, PolicyRule};

    fn intent() -> IntentPayload {
        IntentPayload {
            goal_text: "goal".to_string(),
            constraints: vec![],
            context: ContextState::default(),
            deadline: None,
            priority_order: vec![],
            claims: vec![],
        }
    }

    fn allow_all_logistics() -> Policy {
        Policy {
            rules: vec![PolicyRule {
                effect: Effect::Allow,
                scope: "logistics.*".to_string(),
                agent: "*".to_string(),
                intent_predicates: vec![],
                context_predicates: vec![],
            }],
        }
    }

    fn claim(scope: &str) -> Claim {
        Claim {
            scope: scope.to_string(),
            constraints: BTreeMap::new(),
            claimant: "a".to_string(),
        }
    }

    #[test]
    fn allowed_scopes_are_granted() {
        let mut store = GrantStore::new();
        let (grant, decisions) = store
            .evaluate_and_issue(
                &[claim("logistics.reroute"), claim("finance.spend")],
                &intent(),
                &ContextState::default(),
                &allow_all_logistics(),
                "i-1",
                "a",
                5,
            )
            .unwrap();
        assert_eq!(grant.scopes, BTreeSet::from(["logistics.reroute".to_string()]));
        assert_eq!(decisions.len(), 2);
        assert!(store.check_scope("a", "i-1", "logistics.reroute"));
        assert!(!store.check_scope("a", "i-1", "finance.spend"));
        assert!(!store.check_scope("b", "i-1", "logistics.reroute"));
    }

    #[test]
    fn fully_denied_claims_error_with_reasons() {
        let mut store = GrantStore::new();
        let err = store
            .evaluate_and_issue(
                &[claim("finance.spend")],
                &intent(),
                &ContextState::default(),
                &Policy::default(),
                "i-1",
                "a",
                5,
            )
            .unwrap_err();
        match err {
            SecurityError::AuthorizationDenied { reasons } => {
                assert_eq!(reasons.len(), 1);
                assert!(reasons[0].1.contains("default deny"));
            }
            other => panic!("expected AuthorizationDenied, got {other:?}"),
        }
    }

    #[test]
    fn revocation_is_counted_and_idempotent() {
        let mut store = GrantStore::new();
        for agent in ["a", "b", "c"] {
            store.issue("i-1", agent, BTreeSet::from(["s.x".to_string()]), 0);
        }
        assert_eq!(store.revoke_interaction_grants("i-1"), 3);
        assert_eq!(store.revoke_interaction_grants("i-1"), 0);
        assert_eq!(store.revoke_interaction_grants("i-unknown"), 0);
        assert!(!store.check_scope("a", "i-1", "s.x"));
        assert_eq!(store.live_grants_for_interaction("i-1"), 0);
    }
}
