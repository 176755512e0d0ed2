//! Semantic adjudication: scoring capabilities against an intent.
//!
//! The adjudicator contract maps `(intent, context, capabilities)` to a
//! ranked list of judgments with a structured rationale per candidate.
//! The default implementation is a deterministic lexical scorer;
//! [`CommandAdjudicator`] delegates the same contract to an external
//! process (for example an LLM-backed service) without changing the
//! interaction semantics.

use std::collections::BTreeSet;
use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use super::capability::{Capability, ContextState};
use super::SemanticsError;
use crate::protocol::IntentPayload;

/// Tunables for admission and score blending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjudicatorConfig {
    /// Minimum effective score admitted into negotiation (inclusive).
    pub admission_threshold: f64,
    /// Weight of semantic suitability versus the outcome prior.
    pub alpha: f64,
    /// Exponential smoothing factor for prior updates.
    pub prior_smoothing: f64,
}

impl Default for AdjudicatorConfig {
    fn default() -> Self {
        AdjudicatorConfig {
            admission_threshold: 0.5,
            alpha: 0.7,
            prior_smoothing: 0.2,
        }
    }
}

impl AdjudicatorConfig {
    pub fn validate(&self) -> Result<(), SemanticsError> {
        let checks = [
            ("admission_threshold", self.admission_threshold, 0.0, 1.0),
            ("alpha", self.alpha, 0.0, 1.0),
        ];
        for (name, v, lo, hi) in checks {
            if !v.is_finite() || v < lo || v > hi {
                return Err(SemanticsError::OutOfRange {
                    name: name.to_string(),
                    value: v,
                });
            }
        }
        if !self.prior_smoothing.is_finite()
            || self.prior_smoothing <= 0.0
            || self.prior_smoothing > 1.0
        {
            return Err(SemanticsError::OutOfRange {
                name: "prior_smoothing".to_string(),
                value: self.prior_smoothing,
            });
        }
        Ok(())
    }
}

/// Per-constraint entry of a judgment rationale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintMatch {
    pub key: String,
    pub satisfied: bool,
    pub score: f64,
}

/// Adjudicator output for one capability: suitability in [0,1], a
/// justification trace covering every intent constraint key exactly once,
/// and optionally the prior-blended score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateJudgment {
    pub capability_id: String,
    pub suitability: f64,
    pub rationale: Vec<ConstraintMatch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blended: Option<f64>,
}

impl CandidateJudgment {
    /// Blended score when present, raw suitability otherwise.
    pub fn effective_score(&self) -> f64 {
        self.blended.unwrap_or(self.suitability)
    }
}

/// The adjudication contract. Implementations must be deterministic for
/// equal inputs and return one judgment per capability, ranked by
/// suitability descending with ties broken by capability id.
pub trait Adjudicator: Send {
    fn adjudicate(
        &self,
        intent: &IntentPayload,
        context: &ContextState,
        capabilities: &[Capability],
    ) -> Result<Vec<CandidateJudgment>, SemanticsError>;
}

/// Lowercase tokens split on non-alphanumeric characters, deduplicated.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Deterministic lexical scorer:
/// `suitability = w_lex · overlap + w_con · coverage` where overlap is the
/// fraction of goal tokens found in the capability's description and tags,
/// and coverage is the fraction of intent constraint keys inside the
/// capability's constraint domain.
#[derive(Debug, Clone)]
pub struct LexicalAdjudicator {
    pub w_lex: f64,
    pub w_con: f64,
}

impl Default for LexicalAdjudicator {
    fn default() -> Self {
        LexicalAdjudicator {
            w_lex: 0.5,
            w_con: 0.5,
        }
    }
}

impl LexicalAdjudicator {
    fn judge(&self, intent: &IntentPayload, capability: &Capability) -> CandidateJudgment {
        let goal_tokens = tokenize(&intent.goal_text);
        let mut vocab = tokenize(&capability.description);
        for tag in &capability.tags {
            vocab.extend(tokenize(tag));
        }
        let overlap = if goal_tokens.is_empty() {
            0.0
        } else {
            goal_tokens.intersection(&vocab).count() as f64 / goal_tokens.len() as f64
        };

        let mut rationale = Vec::with_capacity(intent.constraints.len());
        let mut matched = 0usize;
        for constraint in &intent.constraints {
            let satisfied = capability.constraint_domain.contains(&constraint.key);
            if satisfied {
                matched += 1;
            }
            rationale.push(ConstraintMatch {
                key: constraint.key.clone(),
                satisfied,
                score: if satisfied { 1.0 } else { 0.0 },
            });
        }
        let coverage = if intent.constraints.is_empty() {
            1.0
        } else {
            matched as f64 / intent.constraints.len() as f64
        };

        CandidateJudgment {
            capability_id: capability.capability_id.clone(),
            suitability: self.w_lex * overlap + self.w_con * coverage,
            rationale,
            blended: None,
        }
    }
}

impl Adjudicator for LexicalAdjudicator {
    fn adjudicate(
        &self,
        intent: &IntentPayload,
        _context: &ContextState,
        capabilities: &[Capability],
    ) -> Result<Vec<CandidateJudgment>, SemanticsError> {
        if capabilities.is_empty() {
            return Err(SemanticsError::NoCapabilities);
        }
        for capability in capabilities {
            capability.validate()?;
        }
        let mut judgments: Vec<CandidateJudgment> = capabilities
            .iter()
            .map(|capability| self.judge(intent, capability))
            .collect();
        sort_judgments(&mut judgments);
        Ok(judgments)
    }
}

/// Ranking order shared by all adjudicators: suitability descending, ties
/// broken by capability id ascending.
pub fn sort_judgments(judgments: &mut [CandidateJudgment]) {
    judgments.sort_by(|a, b| {
        b.suitability
            .total_cmp(&a.suitability)
            .then_with(|| a.capability_id.cmp(&b.capability_id))
    });
}

/// Adjudicator backed by an external command. The request (intent,
/// context, capabilities) is written to the child's stdin as JSON; the
/// child must print a JSON array of judgments to stdout. Output is
/// validated against the same contract the lexical adjudicator obeys.
#[derive(Debug, Clone)]
pub struct CommandAdjudicator {
    pub command: String,
    pub args: Vec<String>,
}

#[derive(Serialize)]
struct AdjudicationRequest<'a> {
    intent: &'a IntentPayload,
    context: &'a ContextState,
    capabilities: &'a [Capability],
}

impl Adjudicator for CommandAdjudicator {
    fn adjudicate(
        &self,
        intent: &IntentPayload,
        context: &ContextState,
        capabilities: &[Capability],
    ) -> Result<Vec<CandidateJudgment>, SemanticsError> {
        if capabilities.is_empty() {
            return Err(SemanticsError::NoCapabilities);
        }
        let request = serde_json::to_vec(&AdjudicationRequest {
            intent,
            context,
            capabilities,
        })
        .map_err(|e| SemanticsError::Adjudicator(e.to_string()))?;

        let mut child = Command::new(&self.command)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| SemanticsError::Adjudicator(format!("spawn {}: {e}", self.command)))?;
        child
            .stdin
            .take()
            .expect("stdin piped")
            .write_all(&request)
            .map_err(|e| SemanticsError::Adjudicator(e.to_string()))?;
        let output = child
            .wait_with_output()
            .map_err(|e| SemanticsError::Adjudicator(e.to_string()))?;
        if !output.status.success() {
            return Err(SemanticsError::Adjudicator(format!(
                "{} exited with {}",
                self.command, output.status
            )));
        }
        let mut judgments: Vec<CandidateJudgment> = serde_json::from_slice(&output.stdout)
            .map_err(|e| SemanticsError::Adjudicator(format!("bad adjudicator output: {e}")))?;
        validate_judgments(&judgments, intent, capabilities)?;
        sort_judgments(&mut judgments);
        Ok(judgments)
    }
}

fn validate_judgments(
    judgments: &[CandidateJudgment],
    intent: &IntentPayload,
    capabilities: &[Capability],
) -> Result<(), SemanticsError> {
    if judgments.len() != capabilities.len() {
        return Err(SemanticsError::Adjudicator(format!(
            "expected {} judgments, got {}",
            capabilities.len(),
            judgments.len()
        )));
    }
    let keys = intent.constraint_keys();
    for j in judgments {
        if !(0.0..=1.0).contains(&j.suitability) || !j.suitability.is_finite() {
            return Err(SemanticsError::OutOfRange {
                name: format!("suitability[{}]", j.capability_id),
                value: j.suitability,
            });
        }
        let rationale_keys: BTreeSet<String> = j.rationale.iter().map(|m| m.key.clone()).collect();
        if rationale_keys != keys || j.rationale.len() != keys.len() {
            return Err(SemanticsError::Adjudicator(format!(
                "rationale of {} does not cover the intent constraint keys exactly once",
                j.capability_id
            )));
        }
    }
    Ok(())
}

/// Retain exactly the judgments whose effective score meets the admission
/// threshold (inclusive); input order is preserved.
pub fn admit(judgments: &[CandidateJudgment], config: &AdjudicatorConfig) -> Vec<CandidateJudgment> {
    judgments
        .iter()
        .filter(|j| j.effective_score() >= config.admission_threshold)
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Comparator, Constraint};

    fn intent(goal: &str, keys: &[&str]) -> IntentPayload {
        IntentPayload {
            goal_text: goal.to_string(),
            constraints: keys
                .iter()
                .map(|k| Constraint {
                    key: k.to_string(),
                    comparator: Comparator::Le,
                    value: serde_json::json!(1),
                })
                .collect(),
            context: ContextState::default(),
            deadline: None,
            priority_order: keys.iter().map(|k| k.to_string()).collect(),
            claims: vec![],
        }
    }

    fn capability(id: &str, description: &str, domain: &[&str]) -> Capability {
        Capability {
            capability_id: id.to_string(),
            owner: "owner".to_string(),
            description: description.to_string(),
            tags: BTreeSet::new(),
            declared_scopes: BTreeSet::new(),
            constraint_domain: domain.iter().map(|k| k.to_string()).collect(),
        }
    }

    #[test]
    fn saturated_capability_scores_one() {
        let intent = intent("move the container", &["cost", "time"]);
        let cap = capability("c", "move the container", &["cost", "time"]);
        let judgments = LexicalAdjudicator::default()
            .adjudicate(&intent, &ContextState::default(), &[cap])
            .unwrap();
        assert_eq!(judgments[0].suitability, 1.0);
        assert!(judgments[0].rationale.iter().all(|m| m.satisfied));
    }

    #[test]
    fn disjoint_capability_scores_zero() {
        let intent = intent("move the container", &["cost"]);
        let cap = capability("c", "bake sourdough bread", &[]);
        let judgments = LexicalAdjudicator::default()
            .adjudicate(&intent, &ContextState::default(), &[cap])
            .unwrap();
        assert_eq!(judgments[0].suitability, 0.0);
    }

    #[test]
    fn empty_capability_list_is_an_error() {
        let intent = intent("anything", &[]);
        assert!(matches!(
            LexicalAdjudicator::default().adjudicate(&intent, &ContextState::default(), &[]),
            Err(SemanticsError::NoCapabilities)
        ));
    }

    #[test]
    fn five_capability_fixture_ranking() {
        // Hand-derived expectations; goal tokens:
        // {deliver, container, reroute, port, closure} (5 tokens).
        let intent = intent(
            "deliver container reroute port closure",
            &["radius_km", "cost_ceiling", "deadline_hours"],
        );
        let caps = vec![
            capability(
                "cap-a",
                "reroute freight container via inland rail port closure contingency",
                &["radius_km", "cost_ceiling"],
            ),
            capability("cap-b", "warehouse storage pallets", &["pallets"]),
            capability("cap-c", "deliver parcels city courier", &["deadline_hours"]),
            capability(
                "cap-d",
                "deliver container reroute port closure",
                &["radius_km", "cost_ceiling", "deadline_hours"],
            ),
            capability(
                "cap-e",
                "port operations closure updates",
                &["radius_km", "cost_ceiling", "deadline_hours", "extra"],
            ),
        ];
        let judgments = LexicalAdjudicator::default()
            .adjudicate(&intent, &ContextState::default(), &caps)
            .unwrap();
        let order: Vec<&str> = judgments.iter().map(|j| j.capability_id.as_str()).collect();
        assert_eq!(order, vec!["cap-d", "cap-a", "cap-e", "cap-c", "cap-b"]);

        let by_id = |id: &str| judgments.iter().find(|j| j.capability_id == id).unwrap();
        assert!((by_id("cap-d").suitability - 1.0).abs() < 1e-12);
        // cap-a: overlap 4/5, coverage 2/3.
        assert!((by_id("cap-a").suitability - (0.5 * 0.8 + 0.5 * (2.0 / 3.0))).abs() < 1e-12);
        // cap-e: overlap 2/5, coverage 3/3.
        assert!((by_id("cap-e").suitability - (0.5 * 0.4 + 0.5 * 1.0)).abs() < 1e-12);
        // cap-c: overlap 1/5, coverage 1/3.
        assert!((by_id("cap-c").suitability - (0.5 * 0.2 + 0.5 * (1.0 / 3.0))).abs() < 1e-12);
        assert_eq!(by_id("cap-b").suitability, 0.0);
    }

    #[test]
    fn adjudication_is_deterministic() {
        let intent = intent("reroute cargo", &["cost"]);
        let caps = vec![
            capability("x", "reroute cargo quickly", &["cost"]),
            capability("y", "reroute cargo slowly", &["cost"]),
        ];
        let a = LexicalAdjudicator::default()
            .adjudicate(&intent, &ContextState::default(), &caps)
            .unwrap();
        let b = LexicalAdjudicator::default()
            .adjudicate(&intent, &ContextState::default(), &caps)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tie_break_is_lexicographic() {
        let intent = intent("shared goal", &[]);
        let caps = vec![
            capability("zeta", "shared goal", &[]),
            capability("alpha", "shared goal", &[]),
        ];
        let judgments = LexicalAdjudicator::default()
            .adjudicate(&intent, &ContextState::default(), &caps)
            .unwrap();
        assert_eq!(judgments[0].capability_id, "alpha");
    }

    #[test]
    fn admission_threshold_is_inclusive() {
        let mk = |id: &str, s: f64| CandidateJudgment {
            capability_id: id.to_string(),
            suitability: s,
            rationale: vec![],
            blended: None,
        };
        let judgments = vec![mk("a", 0.9), mk("b", 0.5), mk("c", 0.49)];
        let config = AdjudicatorConfig {
            admission_threshold: 0.5,
            ..AdjudicatorConfig::default()
        };
        let admitted = admit(&judgments, &config);
        let ids: Vec<&str> = admitted.iter().map(|j| j.capability_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b"]);

        let all = admit(
            &judgments,
            &AdjudicatorConfig {
                admission_threshold: 0.0,
                ..AdjudicatorConfig::default()
            },
        );
        assert_eq!(all.len(), 3);

        let perfect_only = admit(
            &judgments,
            &AdjudicatorConfig {
                admission_threshold: 1.0,
                ..AdjudicatorConfig::default()
            },
        );
        assert!(perfect_only.is_empty());
    }

    #[test]
    fn command_adjudicator_round_trips() {
        // An "external" adjudicator that echoes a fixed ranking.
        let intent = intent("goal", &[]);
        let caps = vec![capability("only", "goal", &[])];
        let adj = CommandAdjudicator {
            command: "sh".to_string(),
            args: vec![
                "-c".to_string(),
                r#"cat > /dev/null; echo '[{"capability_id":"only","suitability":0.75,"rationale":[]}]'"#
                    .to_string(),
            ],
        };
        let judgments = adj.adjudicate(&intent, &ContextState::default(), &caps).unwrap();
        assert_eq!(judgments[0].suitability, 0.75);
    }
}
