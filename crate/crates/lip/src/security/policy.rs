//! Intention-based access control: ordered first-match allow/deny rules
//! evaluated against claimed scopes, the expressed intent, and context.
//! The default effect is deny.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;

use super::SecurityError;
use crate::protocol::IntentPayload;
use crate::semantics::ContextState;

/// A declared authorization scope, e.g. `logistics.rebook`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub scope: String,
    #[serde(default)]
    pub constraints: BTreeMap<String, Value>,
    pub claimant: String,
}

/// Scope grammar: `segment(.segment)*`, segments of `[A-Za-z0-9_-]+`.
pub fn valid_scope(scope: &str) -> bool {
    !scope.is_empty()
        && scope.split('.').all(|seg| {
            !seg.is_empty()
                && seg
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        })
}

/// Per-segment wildcard match: `*` matches exactly one segment.
pub fn scope_pattern_matches(pattern: &str, scope: &str) -> bool {
    let pat: Vec<&str> = pattern.split('.').collect();
    let segs: Vec<&str> = scope.split('.').collect();
    pat.len() == segs.len()
        && pat
            .iter()
            .zip(&segs)
            .all(|(p, s)| *p == "*" || p == s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    Allow,
    Deny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredicateOp {
    Present,
    Absent,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

/// A predicate over intent constraint keys or context fact keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub key: String,
    pub op: PredicateOp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
}

fn compare(op: PredicateOp, actual: &Value, expected: &Value) -> bool {
    match op {
        PredicateOp::Eq => actual == expected,
        PredicateOp::Ne => actual != expected,
        PredicateOp::Lt | PredicateOp::Le | PredicateOp::Gt | PredicateOp::Ge => {
            let (Some(a), Some(b)) = (actual.as_f64(), expected.as_f64()) else {
                return false;
            };
            match op {
                PredicateOp::Lt => a < b,
                PredicateOp::Le => a <= b,
                PredicateOp::Gt => a > b,
                PredicateOp::Ge => a >= b,
                _ => unreachable!(),
            }
        }
        PredicateOp::Present | PredicateOp::Absent => unreachable!("handled by caller"),
    }
}

impl Predicate {
    fn holds(&self, lookup: impl Fn(&str) -> Option<Value>) -> bool {
        let found = lookup(&self.key);
        match self.op {
            PredicateOp::Present => found.is_some(),
            PredicateOp::Absent => found.is_none(),
            op => match (&found, &self.value) {
                (Some(actual), Some(expected)) => compare(op, actual, expected),
                _ => false,
            },
        }
    }
}

/// One ordered rule: effect, scope pattern, agent selector (`*` or a
/// fingerprint), and predicates over the intent and context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub effect: Effect,
    pub scope: String,
    #[serde(default = "any_agent")]
    pub agent: String,
    #[serde(default)]
    pub intent_predicates: Vec<Predicate>,
    #[serde(default)]
    pub context_predicates: Vec<Predicate>,
}

fn any_agent() -> String {
    "*".to_string()
}

impl PolicyRule {
    fn matches(&self, claim: &Claim, intent: &IntentPayload, context: &ContextState) -> bool {
        if !scope_pattern_matches(&self.scope, &claim.scope) {
            return false;
        }
        if self.agent != "*" && self.agent != claim.claimant {
            return false;
        }
        let intent_ok = self
            .intent_predicates
            .iter()
            .all(|p| p.holds(|key| intent.constraint(key).map(|c| c.value.clone())));
        let context_ok = self
            .context_predicates
            .iter()
            .all(|p| p.holds(|key| context.facts.get(key).cloned()));
        intent_ok && context_ok
    }
}

/// Decision for a single claimed scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeDecision {
    pub scope: String,
    pub allowed: bool,
    /// Index of the first matching rule, when any matched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_index: Option<usize>,
    pub reason: String,
}

/// Ordered first-match policy with default deny.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    #[serde(default)]
    pub rules: Vec<PolicyRule>,
}

impl Policy {
    pub fn from_toml_str(s: &str) -> Result<Self, SecurityError> {
        toml::from_str(s).map_err(|e| SecurityError::PolicyLoad(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SecurityError> {
        let data = std::fs::read_to_string(path)
            .map_err(|e| SecurityError::PolicyLoad(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&data)
    }

    /// Evaluate one claim: first matching rule wins, no match denies.
    pub fn evaluate_claim(
        &self,
        claim: &Claim,
        intent: &IntentPayload,
        context: &ContextState,
    ) -> ScopeDecision {
        if !valid_scope(&claim.scope) {
            return ScopeDecision {
                scope: claim.scope.clone(),
                allowed: false,
                rule_index: None,
                reason: "scope does not match the segment grammar".to_string(),
            };
        }
        for (index, rule) in self.rules.iter().enumerate() {
            if rule.matches(claim, intent, context) {
                return ScopeDecision {
                    scope: claim.scope.clone(),
                    allowed: rule.effect == Effect::Allow,
                    rule_index: Some(index),
                    reason: match rule.effect {
                        Effect::Allow => format!("allowed by rule {index}"),
                        Effect::Deny => format!("denied by rule {index}"),
                    },
                };
            }
        }
        ScopeDecision {
            scope: claim.scope.clone(),
            allowed: false,
            rule_index: None,
            reason: "no matching rule (default deny)".to_string(),
        }
    }

    /// Evaluate a batch of claims, one decision per claimed scope.
    pub fn evaluate_claims(
        &self,
        claims: &[Claim],
        intent: &IntentPayload,
        context: &ContextState,
    ) -> Vec<ScopeDecision> {
        claims
            .iter()
            .map(|c| self.evaluate_claim(c, intent, context))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Comparator, Constraint};
    use serde_json::json;

    fn intent(keys: &[(&str, Value)]) -> IntentPayload {
        IntentPayload {
            goal_text: "goal".to_string(),
            constraints: keys
                .iter()
                .map(|(k, v)| Constraint {
                    key: k.to_string(),
                    comparator: Comparator::Le,
                    value: v.clone(),
                })
                .collect(),
            context: ContextState::default(),
            deadline: None,
            priority_order: vec![],
            claims: vec![],
        }
    }

    fn claim(scope: &str) -> Claim {
        Claim {
            scope: scope.to_string(),
            constraints: BTreeMap::new(),
            claimant: "agent-1".to_string(),
        }
    }

    #[test]
    fn empty_policy_denies_everything() {
        let policy = Policy::default();
        let d = policy.evaluate_claim(&claim("logistics.rebook"), &intent(&[]), &ContextState::default());
        assert!(!d.allowed);
        assert!(d.reason.contains("default deny"));
    }

    #[test]
    fn first_match_wins() {
        let policy = Policy {
            rules: vec![
                PolicyRule {
                    effect: Effect::Deny,
                    scope: "logistics.rebook".to_string(),
                    agent: "*".to_string(),
                    intent_predicates: vec![],
                    context_predicates: vec![],
                },
                PolicyRule {
                    effect: Effect::Allow,
                    scope: "logistics.*".to_string(),
                    agent: "*".to_string(),
                    intent_predicates: vec![],
                    context_predicates: vec![],
                },
            ],
        };
        let ctx = ContextState::default();
        assert!(!policy.evaluate_claim(&claim("logistics.rebook"), &intent(&[]), &ctx).allowed);
        assert!(policy.evaluate_claim(&claim("logistics.reroute"), &intent(&[]), &ctx).allowed);
    }

    #[test]
    fn wildcard_is_per_segment() {
        assert!(scope_pattern_matches("a.*", "a.b"));
        assert!(!scope_pattern_matches("a.*", "a.b.c"));
        assert!(scope_pattern_matches("*.*.*", "a.b.c"));
        assert!(!scope_pattern_matches("a.b", "a"));
    }

    #[test]
    fn intent_predicate_gates_allowance() {
        let policy = Policy {
            rules: vec![PolicyRule {
                effect: Effect::Allow,
                scope: "spend.*".to_string(),
                agent: "*".to_string(),
                intent_predicates: vec![Predicate {
                    key: "cost_limit".to_string(),
                    op: PredicateOp::Present,
                    value: None,
                }],
                context_predicates: vec![],
            }],
        };
        let ctx = ContextState::default();
        // Intent lacking cost_limit falls through to default deny.
        let d = policy.evaluate_claim(&claim("spend.approve"), &intent(&[]), &ctx);
        assert!(!d.allowed);
        let d = policy.evaluate_claim(
            &claim("spend.approve"),
            &intent(&[("cost_limit", json!(100))]),
            &ctx,
        );
        assert!(d.allowed);
    }

    #[test]
    fn numeric_comparison_predicates() {
        let policy = Policy {
            rules: vec![PolicyRule {
                effect: Effect::Allow,
                scope: "spend.approve".to_string(),
                agent: "*".to_string(),
                intent_predicates: vec![Predicate {
                    key: "cost_limit".to_string(),
                    op: PredicateOp::Le,
                    value: Some(json!(500)),
                }],
                context_predicates: vec![],
            }],
        };
        let ctx = ContextState::default();
        assert!(
            policy
                .evaluate_claim(&claim("spend.approve"), &intent(&[("cost_limit", json!(100))]), &ctx)
                .allowed
        );
        assert!(
            !policy
                .evaluate_claim(&claim("spend.approve"), &intent(&[("cost_limit", json!(900))]), &ctx)
                .allowed
        );
    }

    #[test]
    fn agent_selector_restricts() {
        let policy = Policy {
            rules: vec![PolicyRule {
                effect: Effect::Allow,
                scope: "ops.restart".to_string(),
                agent: "agent-1".to_string(),
                intent_predicates: vec![],
                context_predicates: vec![],
            }],
        };
        let ctx = ContextState::default();
        assert!(policy.evaluate_claim(&claim("ops.restart"), &intent(&[]), &ctx).allowed);
        let mut other = claim("ops.restart");
        other.claimant = "agent-2".to_string();
        assert!(!policy.evaluate_claim(&other, &intent(&[]), &ctx).allowed);
    }

    #[test]
    fn invalid_scope_grammar_is_denied() {
        let policy = Policy {
            rules: vec![PolicyRule {
                effect: Effect::Allow,
                scope: "*".to_string(),
                agent: "*".to_string(),
                intent_predicates: vec![],
                context_predicates: vec![],
            }],
        };
        let ctx = ContextState::default();
        for bad in ["", ".", "a..b", "a b"] {
            assert!(!policy.evaluate_claim(&claim(bad), &intent(&[]), &ctx).allowed);
        }
    }

    #[test]
    fn policy_parses_from_toml() {
        let policy = Policy::from_toml_str(
            r#"
            [[rules]]
            effect = "allow"
            scope = "logistics.*"
            agent = "*"

            [[rules]]
            effect = "deny"
            scope = "*"
            "#,
        )
        .unwrap();
        assert_eq!(policy.rules.len(), 2);
        assert_eq!(policy.rules[0].effect, Effect::Allow);
    }
}
