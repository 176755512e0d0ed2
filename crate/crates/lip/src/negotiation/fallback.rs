//! Deterministic fallbacks at the boundary of liquidity.
//!
//! When negotiation fails to converge, recursive simplification retries
//! with a strict subset of the intent's constraints; if nothing is left to
//! drop (or simplification is exhausted) the interaction is anchored to a
//! pre-agreed core ontology with closed-schema validation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::NegotiationError;
use crate::protocol::IntentPayload;
use crate::semantics::tokenize;

/// Fallback modes in selection order: simplification preserves more of
/// the intent's semantics, so it is attempted before solidification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackMode {
    RecursiveSimplification,
    Solidification,
}

/// Field types the core ontology schemas distinguish.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    String,
    Number,
    Boolean,
    Any,
}

impl FieldKind {
    fn admits(&self, value: &Value) -> bool {
        match self {
            FieldKind::String => value.is_string(),
            FieldKind::Number => value.is_number(),
            FieldKind::Boolean => value.is_boolean(),
            FieldKind::Any => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    #[serde(default)]
    pub required: bool,
}

/// One pre-agreed operation: a fixed name, a closed input schema, and the
/// validation rules applied to every invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationSchema {
    pub name: String,
    #[serde(default)]
    pub fields: Vec<FieldSpec>,
}

impl OperationSchema {
    fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }
}

/// Maps matching intents onto a core operation, binding constraint values
/// to schema fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MappingRule {
    /// Goal tokens that must all be present for the rule to match.
    #[serde(default)]
    pub goal_tokens: Vec<String>,
    /// Constraint keys that must all be present for the rule to match.
    #[serde(default)]
    pub required_keys: Vec<String>,
    pub operation: String,
    /// Bind every intent constraint key to the schema field of the same name.
    #[serde(default)]
    pub bind_all_constraints: bool,
    /// Explicit field ← constraint-key bindings.
    #[serde(default)]
    pub bindings: BTreeMap<String, String>,
    /// Literal argument values.
    #[serde(default)]
    pub literals: BTreeMap<String, Value>,
}

/// The minimal pre-agreed core ontology Σ_core.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoreOntology {
    #[serde(default)]
    pub operations: Vec<OperationSchema>,
    #[serde(default)]
    pub mapping_rules: Vec<MappingRule>,
}

impl CoreOntology {
    pub fn is_empty(&self) -> bool {
        self.mapping_rules.is_empty() || self.operations.is_empty()
    }

    pub fn operation(&self, name: &str) -> Option<&OperationSchema> {
        self.operations.iter().find(|op| op.name == name)
    }
}

/// A deterministic invocation of a core operation; executing it bypasses
/// further negotiation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolidInvocation {
    pub operation: String,
    pub args: BTreeMap<String, Value>,
}

/// Drop the lowest-priority constraint, returning a strictly smaller
/// intent. The goal text is untouched.
pub fn fallback_simplify(intent: &IntentPayload) -> Result<IntentPayload, NegotiationError> {
    let keys = intent.constraint_keys();
    let Some(drop_key) = intent
        .priority_order
        .iter()
        .rev()
        .find(|k| keys.contains(*k))
        .cloned()
    else {
        return Err(NegotiationError::NothingToSimplify);
    };
    let mut simplified = intent.clone();
    simplified.constraints.retain(|c| c.key != drop_key);
    simplified.priority_order.retain(|k| *k != drop_key);
    Ok(simplified)
}

fn rule_matches(rule: &MappingRule, intent: &IntentPayload) -> bool {
    let goal_tokens = tokenize(&intent.goal_text);
    if !rule
        .goal_tokens
        .iter()
        .all(|t| goal_tokens.contains(&t.to_lowercase()))
    {
        return false;
    }
    let keys = intent.constraint_keys();
    rule.required_keys.iter().all(|k| keys.contains(k))
}

/// Anchor the intent to the core ontology: apply the first matching
/// mapping rule and validate the produced invocation against the
/// operation's closed schema.
pub fn fallback_solidify(
    intent: &IntentPayload,
    core: &CoreOntology,
) -> Result<SolidInvocation, NegotiationError> {
    if core.is_empty() {
        return Err(NegotiationError::NoMapping {
            goal: intent.goal_text.clone(),
        });
    }
    let Some(rule) = core.mapping_rules.iter().find(|r| rule_matches(r, intent)) else {
        return Err(NegotiationError::NoMapping {
            goal: intent.goal_text.clone(),
        });
    };
    let schema = core
        .operation(&rule.operation)
        .ok_or_else(|| NegotiationError::Internal(format!(
            "mapping rule targets unknown operation {:?}",
            rule.operation
        )))?;

    let mut args: BTreeMap<String, Value> = rule.literals.clone();
    for (field, key) in &rule.bindings {
        if let Some(constraint) = intent.constraint(key) {
            args.insert(field.clone(), constraint.value.clone());
        }
    }
    if rule.bind_all_constraints {
        for constraint in &intent.constraints {
            args.insert(constraint.key.clone(), constraint.value.clone());
        }
    }

    let invocation = SolidInvocation {
        operation: rule.operation.clone(),
        args,
    };
    validate_invocation(&invocation, schema)?;
    Ok(invocation)
}

/// Closed-schema validation: any argument outside the schema is a hard
/// error naming the offending fields (Δ = args ∖ Σ), required fields must
/// be present, and present fields must have the declared type.
pub fn validate_invocation(
    invocation: &SolidInvocation,
    schema: &OperationSchema,
) -> Result<(), NegotiationError> {
    let delta: BTreeSet<String> = invocation
        .args
        .keys()
        .filter(|k| schema.field(k).is_none())
        .cloned()
        .collect();
    if !delta.is_empty() {
        return Err(NegotiationError::SchemaViolation { fields: delta });
    }
    for field in &schema.fields {
        match invocation.args.get(&field.name) {
            None if field.required => {
                return Err(NegotiationError::RuleViolation(format!(
                    "required field {:?} is missing",
                    field.name
                )));
            }
            Some(v) if !field.kind.admits(v) => {
                return Err(NegotiationError::RuleViolation(format!(
                    "field {:?} has the wrong type",
                    field.name
                )));
            }
            _ => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Comparator, Constraint};
    use crate::semantics::ContextState;
    use serde_json::json;

    fn intent_with(constraints: &[(&str, Value)], priority: &[&str]) -> IntentPayload {
        IntentPayload {
            goal_text: "escalate the disruption manually".to_string(),
            constraints: constraints
                .iter()
                .map(|(k, v)| Constraint {
                    key: k.to_string(),
                    comparator: Comparator::Eq,
                    value: v.clone(),
                })
                .collect(),
            context: ContextState::default(),
            deadline: None,
            priority_order: priority.iter().map(|k| k.to_string()).collect(),
            claims: vec![],
        }
    }

    fn ontology() -> CoreOntology {
        CoreOntology {
            operations: vec![OperationSchema {
                name: "manual_escalation".to_string(),
                fields: vec![
                    FieldSpec {
                        name: "region".to_string(),
                        kind: FieldKind::String,
                        required: true,
                    },
                    FieldSpec {
                        name: "severity".to_string(),
                        kind: FieldKind::Number,
                        required: false,
                    },
                ],
            }],
            mapping_rules: vec![MappingRule {
                goal_tokens: vec!["escalate".to_string()],
                required_keys: vec![],
                operation: "manual_escalation".to_string(),
                bind_all_constraints: true,
                bindings: BTreeMap::new(),
                literals: BTreeMap::new(),
            }],
        }
    }

    #[test]
    fn lowest_priority_constraint_is_dropped() {
        let intent = intent_with(
            &[("cost", json!(100)), ("color", json!("blue"))],
            &["cost", "color"],
        );
        let simplified = fallback_simplify(&intent).unwrap();
        assert_eq!(simplified.constraint_keys(), BTreeSet::from(["cost".to_string()]));
        assert_eq!(simplified.goal_text, intent.goal_text);
        assert!(simplified.constraint_keys().is_subset(&intent.constraint_keys()));
        assert!(simplified.constraints.len() < intent.constraints.len());
    }

    #[test]
    fn simplification_terminates() {
        let mut intent = intent_with(&[("a", json!(1)), ("b", json!(2))], &["a", "b"]);
        intent = fallback_simplify(&intent).unwrap();
        intent = fallback_simplify(&intent).unwrap();
        assert!(matches!(
            fallback_simplify(&intent),
            Err(NegotiationError::NothingToSimplify)
        ));
    }

    #[test]
    fn matching_rule_emits_invocation() {
        let intent = intent_with(&[("region", json!("baltic"))], &["region"]);
        let invocation = fallback_solidify(&intent, &ontology()).unwrap();
        assert_eq!(invocation.operation, "manual_escalation");
        assert_eq!(invocation.args["region"], json!("baltic"));
    }

    #[test]
    fn extra_field_names_the_deviation() {
        let intent = intent_with(
            &[("region", json!("baltic")), ("carrier_hint", json!("acme"))],
            &["region", "carrier_hint"],
        );
        match fallback_solidify(&intent, &ontology()) {
            Err(NegotiationError::SchemaViolation { fields }) => {
                assert_eq!(fields, BTreeSet::from(["carrier_hint".to_string()]));
            }
            other => panic!("expected SchemaViolation, got {other:?}"),
        }
    }

    #[test]
    fn empty_ontology_has_no_mapping() {
        let intent = intent_with(&[], &[]);
        assert!(matches!(
            fallback_solidify(&intent, &CoreOntology::default()),
            Err(NegotiationError::NoMapping { .. })
        ));
    }

    #[test]
    fn missing_required_field_is_a_rule_violation() {
        let intent = IntentPayload {
            goal_text: "escalate now".to_string(),
            ..intent_with(&[], &[])
        };
        assert!(matches!(
            fallback_solidify(&intent, &ontology()),
            Err(NegotiationError::RuleViolation(_))
        ));
    }

    #[test]
    fn wrong_type_is_a_rule_violation() {
        let invocation = SolidInvocation {
            operation: "manual_escalation".to_string(),
            args: BTreeMap::from([("region".to_string(), json!(7))]),
        };
        assert!(matches!(
            validate_invocation(&invocation, &ontology().operations[0]),
            Err(NegotiationError::RuleViolation(_))
        ));
    }
}
