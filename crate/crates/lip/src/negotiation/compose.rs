//! Composition of partial offers into an executable plan, and atomic
//! stabilization over the composed plan.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::NegotiationError;
use crate::protocol::{canonical_signing_bytes, Envelope, IntentPayload, MessageType, OfferPayload};
use crate::semantics::CandidateJudgment;
use crate::security::IdentityStore;

/// An offer together with the agent that made it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedOffer {
    pub payload: OfferPayload,
    pub owner: String,
}

/// The constraint-key subset and goal fragment one plan step addresses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubIntention {
    pub constraint_keys: BTreeSet<String>,
    pub goal_fragment: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub sub_intention: SubIntention,
    pub capability_id: String,
    pub owner: String,
    #[serde(default)]
    pub terms: BTreeMap<String, Value>,
}

/// The negotiated protocol π: ordered capability bindings awaiting atomic
/// agreement from every owner in `atomic_accept_set`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionPlan {
    pub plan_id: String,
    pub steps: Vec<PlanStep>,
    /// Union of step coverages; equals the full intent key set for an
    /// executable plan.
    pub coverage: BTreeSet<String>,
    pub atomic_accept_set: BTreeSet<String>,
}

impl CompositionPlan {
    pub fn step_owners(&self) -> BTreeSet<String> {
        self.steps.iter().map(|s| s.owner.clone()).collect()
    }

    pub fn step(&self, capability_id: &str) -> Option<&PlanStep> {
        self.steps.iter().find(|s| s.capability_id == capability_id)
    }
}

fn plan_id(intent: &IntentPayload, steps: &[PlanStep]) -> Result<String, NegotiationError> {
    let mut hasher = Sha256::new();
    hasher.update(intent.goal_text.as_bytes());
    let doc = crate::protocol::canonical::to_canonical_bytes(&steps)
        .map_err(|e| NegotiationError::Internal(e.to_string()))?;
    hasher.update(&doc);
    Ok(format!("p-{}", hex::encode(&hasher.finalize()[..8])))
}

/// Greedy weighted set cover over the intent's constraint keys.
///
/// Repeatedly picks the admitted offer maximizing
/// `newly covered keys × effective score`, breaking ties by higher score
/// and then lexicographic capability id. Returns `Unresolvable` with the
/// missing keys when no cover exists — partial execution is never an
/// outcome. An intent with no constraint keys composes to a single step
/// from the best-scoring offer.
pub fn compose(
    intent: &IntentPayload,
    offers: &[RecordedOffer],
    judgments: &[CandidateJudgment],
) -> Result<CompositionPlan, NegotiationError> {
    let scores: BTreeMap<&str, f64> = judgments
        .iter()
        .map(|j| (j.capability_id.as_str(), j.effective_score()))
        .collect();
    // Steps reference only admitted offers.
    let admitted: Vec<&RecordedOffer> = offers
        .iter()
        .filter(|o| scores.contains_key(o.payload.capability_id.as_str()))
        .collect();

    let universe = intent.constraint_keys();
    let mut steps: Vec<PlanStep> = Vec::new();

    if universe.is_empty() {
        let best = admitted
            .iter()
            .max_by(|a, b| {
                let sa = scores[a.payload.capability_id.as_str()];
                let sb = scores[b.payload.capability_id.as_str()];
                sa.total_cmp(&sb)
                    .then_with(|| b.payload.capability_id.cmp(&a.payload.capability_id))
            })
            .ok_or_else(|| NegotiationError::Unresolvable {
                missing_keys: BTreeSet::new(),
            })?;
        steps.push(PlanStep {
            sub_intention: SubIntention {
                constraint_keys: BTreeSet::new(),
                goal_fragment: intent.goal_text.clone(),
            },
            capability_id: best.payload.capability_id.clone(),
            owner: best.owner.clone(),
            terms: best.payload.terms.clone(),
        });
    } else {
        let mut remaining = universe.clone();
        let mut used: BTreeSet<&str> = BTreeSet::new();
        while !remaining.is_empty() {
            let mut best: Option<(f64, f64, &RecordedOffer, BTreeSet<String>)> = None;
            for offer in &admitted {
                let cap = offer.payload.capability_id.as_str();
                if used.contains(cap) {
                    continue;
                }
                let newly: BTreeSet<String> = offer
                    .payload
                    .coverage
                    .intersection(&remaining)
                    .cloned()
                    .collect();
                if newly.is_empty() {
                    continue;
                }
                let score = scores[cap];
                let weight = newly.len() as f64 * score;
                let better = match &best {
                    None => true,
                    Some((bw, bs, bo, _)) => {
                        weight > *bw
                            || (weight == *bw && score > *bs)
                            || (weight == *bw
                                && score == *bs
                                && cap < bo.payload.capability_id.as_str())
                    }
                };
                if better {
                    best = Some((weight, score, offer, newly));
                }
            }
            let Some((_, _, offer, newly)) = best else {
                return Err(NegotiationError::Unresolvable {
                    missing_keys: remaining,
                });
            };
            remaining = remaining.difference(&newly).cloned().collect();
            used.insert(offer.payload.capability_id.as_str());
            steps.push(PlanStep {
                sub_intention: SubIntention {
                    constraint_keys: newly,
                    goal_fragment: intent.goal_text.clone(),
                },
                capability_id: offer.payload.capability_id.clone(),
                owner: offer.owner.clone(),
                terms: offer.payload.terms.clone(),
            });
        }
    }

    let coverage = steps
        .iter()
        .flat_map(|s| s.sub_intention.constraint_keys.iter().cloned())
        .collect();
    let atomic_accept_set = steps.iter().map(|s| s.owner.clone()).collect();
    Ok(CompositionPlan {
        plan_id: plan_id(intent, &steps)?,
        steps,
        coverage,
        atomic_accept_set,
    })
}

/// Result of a stabilization attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum StabilizationOutcome {
    /// Every member of the atomic accept set delivered a verified Accept.
    Stabilized,
    /// Agreement is incomplete; execution stays blocked.
    Pending { missing: BTreeSet<String> },
}

/// Check atomic agreement over a full-coverage plan.
///
/// Succeeds iff every agent in the plan's accept set has a
/// signature-verified Accept referencing `plan_id`. A bad signature on any
/// Accept rejects the whole stabilization; a missing one leaves it
/// pending. Accepts referencing other plans are ignored.
pub fn stabilize(
    plan: &CompositionPlan,
    accepts: &[Envelope],
    identities: &IdentityStore,
) -> Result<StabilizationOutcome, NegotiationError> {
    let mut verified: BTreeSet<String> = BTreeSet::new();
    for envelope in accepts {
        if envelope.message_type() != MessageType::Accept {
            continue;
        }
        let Some(accept) = envelope.payload.as_accept() else {
            continue;
        };
        if accept.plan_id != plan.plan_id {
            continue;
        }
        let identity = identities
            .get(&envelope.sender)
            .ok_or_else(|| NegotiationError::AcceptRejected {
                agent: envelope.sender.clone(),
                reason: "unknown sender".to_string(),
            })?;
        let signature_hex =
            envelope
                .signature
                .as_deref()
                .ok_or_else(|| NegotiationError::AcceptRejected {
                    agent: envelope.sender.clone(),
                    reason: "missing signature".to_string(),
                })?;
        let bytes = canonical_signing_bytes(envelope)
            .map_err(|e| NegotiationError::Internal(e.to_string()))?;
        identity
            .verify(&bytes, signature_hex)
            .map_err(|e| NegotiationError::AcceptRejected {
                agent: envelope.sender.clone(),
                reason: e.to_string(),
            })?;
        verified.insert(envelope.sender.clone());
    }
    let missing: BTreeSet<String> = plan
        .atomic_accept_set
        .difference(&verified)
        .cloned()
        .collect();
    if missing.is_empty() {
        Ok(StabilizationOutcome::Stabilized)
    } else {
        Ok(StabilizationOutcome::Pending { missing })
    }
}

/// Exhaustive set-cover feasibility check, usable as an oracle against
/// the greedy composer for small offer sets.
pub fn cover_exists(universe: &BTreeSet<String>, coverages: &[BTreeSet<String>]) -> bool {
    if universe.is_empty() {
        return true;
    }
    let union: BTreeSet<&String> = coverages.iter().flatten().collect();
    universe.iter().all(|k| union.contains(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Comparator, Constraint};
    use crate::semantics::ContextState;

    fn intent(keys: &[&str]) -> IntentPayload {
        IntentPayload {
            goal_text: "compose things".to_string(),
            constraints: keys
                .iter()
                .map(|k| Constraint {
                    key: k.to_string(),
                    comparator: Comparator::Eq,
                    value: serde_json::json!(true),
                })
                .collect(),
            context: ContextState::default(),
            deadline: None,
            priority_order: keys.iter().map(|k| k.to_string()).collect(),
            claims: vec![],
        }
    }

    fn offer(cap: &str, owner: &str, coverage: &[&str], total: bool) -> RecordedOffer {
        RecordedOffer {
            payload: OfferPayload {
                capability_id: cap.to_string(),
                coverage: coverage.iter().map(|k| k.to_string()).collect(),
                partial: !total,
                terms: BTreeMap::new(),
                expiry: i64::MAX,
            },
            owner: owner.to_string(),
        }
    }

    fn judgment(cap: &str, score: f64) -> CandidateJudgment {
        CandidateJudgment {
            capability_id: cap.to_string(),
            suitability: score,
            rationale: vec![],
            blended: None,
        }
    }

    #[test]
    fn single_total_offer_composes_one_step() {
        let intent = intent(&["a", "b"]);
        let offers = vec![offer("cap", "owner", &["a", "b"], true)];
        let plan = compose(&intent, &offers, &[judgment("cap", 0.9)]).unwrap();
        assert_eq!(plan.steps.len(), 1);
        assert_eq!(plan.coverage, intent.constraint_keys());
        assert_eq!(plan.atomic_accept_set, BTreeSet::from(["owner".to_string()]));
    }

    #[test]
    fn disjoint_partials_compose_and_neither_suffices_alone() {
        let intent = intent(&["a", "b"]);
        let o1 = offer("cap1", "north", &["a"], false);
        let o2 = offer("cap2", "south", &["b"], false);
        let judgments = vec![judgment("cap1", 0.8), judgment("cap2", 0.7)];

        let plan = compose(&intent, &[o1.clone(), o2.clone()], &judgments).unwrap();
        assert_eq!(plan.steps.len(), 2);
        assert_eq!(plan.atomic_accept_set.len(), 2);

        for solo in [&[o1][..], &[o2][..]] {
            assert!(matches!(
                compose(&intent, solo, &judgments),
                Err(NegotiationError::Unresolvable { .. })
            ));
        }
    }

    #[test]
    fn uncovered_key_is_reported() {
        let intent = intent(&["a", "b", "c", "d"]);
        let offers = vec![
            offer("cap1", "x", &["a", "b"], false),
            offer("cap2", "y", &["b", "c"], false),
        ];
        let judgments = vec![judgment("cap1", 0.9), judgment("cap2", 0.9)];
        match compose(&intent, &offers, &judgments) {
            Err(NegotiationError::Unresolvable { missing_keys }) => {
                assert_eq!(missing_keys, BTreeSet::from(["d".to_string()]));
            }
            other => panic!("expected Unresolvable, got {other:?}"),
        }
    }

    #[test]
    fn greedy_prefers_weight_then_score_then_id() {
        let wide_intent = intent(&["a", "b", "c"]);
        // cap-wide covers 3 keys at 0.5 (weight 1.5);
        // cap-narrow covers 1 key at 0.9 (weight 0.9).
        let offers = vec![
            offer("cap-narrow", "n", &["a"], false),
            offer("cap-wide", "w", &["a", "b", "c"], true),
        ];
        let judgments = vec![judgment("cap-narrow", 0.9), judgment("cap-wide", 0.5)];
        let plan = compose(&wide_intent, &offers, &judgments).unwrap();
        assert_eq!(plan.steps.len(), 1);
        assert_eq!(plan.steps[0].capability_id, "cap-wide");

        // Equal weight and score: lexicographic id wins.
        let offers = vec![
            offer("cap-b", "y", &["a"], false),
            offer("cap-a", "x", &["a"], false),
        ];
        let judgments = vec![judgment("cap-a", 0.6), judgment("cap-b", 0.6)];
        let plan = compose(&intent(&["a"]), &offers, &judgments).unwrap();
        assert_eq!(plan.steps[0].capability_id, "cap-a");
    }

    #[test]
    fn unconstrained_intent_takes_best_single_offer() {
        let intent = intent(&[]);
        let offers = vec![
            offer("lowscore", "x", &[], true),
            offer("highscore", "y", &[], true),
        ];
        let judgments = vec![judgment("lowscore", 0.5), judgment("highscore", 0.9)];
        let plan = compose(&intent, &offers, &judgments).unwrap();
        assert_eq!(plan.steps.len(), 1);
        assert_eq!(plan.steps[0].capability_id, "highscore");
    }

    #[test]
    fn plan_id_is_deterministic() {
        let intent = intent(&["a"]);
        let offers = vec![offer("cap", "o", &["a"], true)];
        let judgments = vec![judgment("cap", 0.9)];
        let p1 = compose(&intent, &offers, &judgments).unwrap();
        let p2 = compose(&intent, &offers, &judgments).unwrap();
        assert_eq!(p1.plan_id, p2.plan_id);
    }
}
