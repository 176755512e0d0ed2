//! Scripted agents: deterministic rule-driven participants.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;

use super::scenario::{AgentSpec, BehaviorSpec, ExecuteResult};
use super::HarnessError;
use crate::negotiation::CompositionPlan;
use crate::protocol::{
    AcceptPayload, CompletePayload, Envelope, ExecutePayload, FailureKind, IntentPayload,
    MessageType, OfferPayload, Payload, RejectPayload,
};
use crate::security::{sign_envelope, Keypair};
use crate::semantics::Capability;

/// One outgoing reaction: deliver `envelope` after `delay_ticks`.
pub struct Reaction {
    pub delay_ticks: i64,
    pub envelope: Envelope,
}

pub struct ScriptedAgent {
    pub name: String,
    pub keypair: Keypair,
    pub agent_id: String,
    pub token: Option<String>,
    pub capabilities: Vec<Capability>,
    behavior: BehaviorSpec,
    msg_seq: u64,
    /// Capabilities this agent has withdrawn (after an injected fault).
    withdrawn: BTreeSet<String>,
}

impl ScriptedAgent {
    pub fn from_spec(spec: &AgentSpec, scenario_seed: u64) -> Self {
        let keypair = Keypair::derive(scenario_seed, &spec.name);
        let agent_id = keypair.fingerprint();
        let capabilities = spec
            .capabilities
            .iter()
            .cloned()
            .map(|c| c.into_capability(&agent_id))
            .collect();
        ScriptedAgent {
            name: spec.name.clone(),
            keypair,
            agent_id,
            token: None,
            capabilities,
            behavior: spec.behavior.clone(),
            msg_seq: 0,
            withdrawn: BTreeSet::new(),
        }
    }

    pub fn next_message_id(&mut self) -> String {
        self.msg_seq += 1;
        format!("m-{}-{}", self.name, self.msg_seq)
    }

    pub fn owns(&self, capability_id: &str) -> bool {
        self.capabilities
            .iter()
            .any(|c| c.capability_id == capability_id)
    }

    /// Mark a capability as withdrawn; future solicitations decline it.
    pub fn withdraw(&mut self, capability_id: &str) {
        self.withdrawn.insert(capability_id.to_string());
    }

    fn envelope(&mut self, interaction_id: &str, payload: Payload, now: i64) -> Envelope {
        Envelope::new(
            self.next_message_id(),
            interaction_id,
            self.agent_id.clone(),
            payload,
            now,
        )
    }

    fn signed(
        &mut self,
        interaction_id: &str,
        payload: Payload,
        now: i64,
    ) -> Result<Envelope, HarnessError> {
        let envelope = self.envelope(interaction_id, payload, now);
        let keypair = self.keypair.clone();
        Ok(sign_envelope(&envelope, &keypair)?)
    }

    /// Scripted reaction to a coordinator-delivered envelope.
    pub fn react(&mut self, envelope: &Envelope, now: i64) -> Result<Vec<Reaction>, HarnessError> {
        let id = envelope.interaction_id.clone();
        let delay = self.behavior.respond_delay_ticks;
        let mut reactions = Vec::new();
        match &envelope.payload {
            // Solicitation: offer or decline each owned capability.
            Payload::Intent(intent) => {
                let capabilities = self.capabilities.clone();
                for capability in capabilities {
                    let template = self
                        .behavior
                        .offers
                        .get(&capability.capability_id)
                        .cloned()
                        .unwrap_or_default();
                    if template.decline || self.withdrawn.contains(&capability.capability_id) {
                        let reject = self.envelope(
                            &id,
                            Payload::Reject(RejectPayload {
                                capability_id: Some(capability.capability_id.clone()),
                                plan_id: None,
                                failure: None,
                                note: Some("declined".to_string()),
                                in_reply_to: Some(envelope.message_id.clone()),
                            }),
                            now,
                        );
                        reactions.push(Reaction {
                            delay_ticks: delay,
                            envelope: reject,
                        });
                        continue;
                    }
                    let offer = self.build_offer(&id, intent, &capability, &template, now);
                    reactions.push(Reaction {
                        delay_ticks: delay,
                        envelope: offer,
                    });
                }
            }
            // Plan proposal from the coordinator: sign or decline.
            Payload::Offer(offer) => {
                if let Some(plan) = offer.terms.get("plan") {
                    let plan: CompositionPlan = serde_json::from_value(plan.clone())
                        .map_err(|e| HarnessError::Scenario(format!("bad plan proposal: {e}")))?;
                    if !plan.atomic_accept_set.contains(&self.agent_id) {
                        return Ok(reactions);
                    }
                    let own_step_withdrawn = plan
                        .steps
                        .iter()
                        .any(|s| s.owner == self.agent_id && self.withdrawn.contains(&s.capability_id));
                    if self.behavior.accept_plans && !own_step_withdrawn {
                        let accept = self.signed(
                            &id,
                            Payload::Accept(AcceptPayload {
                                plan_id: plan.plan_id.clone(),
                            }),
                            now,
                        )?;
                        reactions.push(Reaction {
                            delay_ticks: delay,
                            envelope: accept,
                        });
                    } else {
                        let reject = self.envelope(
                            &id,
                            Payload::Reject(RejectPayload {
                                capability_id: None,
                                plan_id: Some(plan.plan_id.clone()),
                                failure: None,
                                note: Some("plan declined".to_string()),
                                in_reply_to: Some(envelope.message_id.clone()),
                            }),
                            now,
                        );
                        reactions.push(Reaction {
                            delay_ticks: delay,
                            envelope: reject,
                        });
                    }
                }
            }
            // Stabilization notice to the initiator: authorize execution.
            Payload::Accept(accept) => {
                let execute = self.signed(
                    &id,
                    Payload::Execute(ExecutePayload {
                        plan_id: accept.plan_id.clone(),
                        capability_id: None,
                    }),
                    now,
                )?;
                reactions.push(Reaction {
                    delay_ticks: delay,
                    envelope: execute,
                });
            }
            // Step dispatch: execute per script.
            Payload::Execute(execute) => {
                let Some(capability_id) = execute.capability_id.clone() else {
                    return Ok(reactions);
                };
                if !self.owns(&capability_id) {
                    return Ok(reactions);
                }
                let latency = self.behavior.on_execute.latency_ticks as i64;
                let failed = self.behavior.on_execute.result == ExecuteResult::Fail
                    || self.withdrawn.contains(&capability_id);
                if failed {
                    let kind = self
                        .behavior
                        .on_execute
                        .failure_kind
                        .unwrap_or(FailureKind::ExecutionError);
                    let reject = self.envelope(
                        &id,
                        Payload::Reject(RejectPayload {
                            capability_id: Some(capability_id),
                            plan_id: Some(execute.plan_id.clone()),
                            failure: Some(kind),
                            note: None,
                            in_reply_to: Some(envelope.message_id.clone()),
                        }),
                        now,
                    );
                    reactions.push(Reaction {
                        delay_ticks: latency.max(1),
                        envelope: reject,
                    });
                } else {
                    let complete = self.signed(
                        &id,
                        Payload::Complete(CompletePayload {
                            plan_id: execute.plan_id.clone(),
                            capability_id,
                            success: true,
                            latency_ticks: Some(self.behavior.on_execute.latency_ticks),
                            output: None,
                        }),
                        now,
                    )?;
                    reactions.push(Reaction {
                        delay_ticks: latency.max(1),
                        envelope: complete,
                    });
                }
            }
            // Completion notices, rejects, dissolutions: no scripted reply.
            Payload::Complete(_) | Payload::Reject(_) | Payload::Dissolve(_) => {}
        }
        Ok(reactions)
    }

    fn build_offer(
        &mut self,
        interaction_id: &str,
        intent: &IntentPayload,
        capability: &Capability,
        template: &super::scenario::OfferTemplate,
        now: i64,
    ) -> Envelope {
        let keys = intent.constraint_keys();
        let coverage: BTreeSet<String> = match &template.coverage {
            Some(explicit) => explicit.iter().cloned().filter(|k| keys.contains(k)).collect(),
            None => capability
                .constraint_domain
                .intersection(&keys)
                .cloned()
                .collect(),
        };
        let partial = coverage != keys;
        let terms: BTreeMap<String, Value> = template.terms.clone();
        let expiry = now + template.expiry_ticks.unwrap_or(1_000_000);
        self.envelope(
            interaction_id,
            Payload::Offer(OfferPayload {
                capability_id: capability.capability_id.clone(),
                coverage,
                partial,
                terms,
                expiry,
            }),
            now,
        )
    }

    /// Envelopes emitted when a fault hits one of this agent's
    /// capabilities while engaged in the given interactions.
    pub fn emit_fault(
        &mut self,
        capability_id: &str,
        kind: FailureKind,
        interaction_ids: &[String],
        now: i64,
    ) -> Vec<Reaction> {
        self.withdraw(capability_id);
        interaction_ids
            .iter()
            .map(|id| {
                let reject = self.envelope(
                    id,
                    Payload::Reject(RejectPayload {
                        capability_id: Some(capability_id.to_string()),
                        plan_id: None,
                        failure: Some(kind),
                        note: None,
                        in_reply_to: None,
                    }),
                    now,
                );
                Reaction {
                    delay_ticks: 0,
                    envelope: reject,
                }
            })
            .collect()
    }

    /// True when this message type must carry a signature from us.
    pub fn signs(message_type: MessageType) -> bool {
        message_type.requires_signature()
    }
}
