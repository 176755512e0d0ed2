//! The semantic service bus.
//!
//! The coordinator routes envelopes through authentication, authorization,
//! lifecycle, and negotiation; owns interaction contexts; enforces
//! mandatory dissolution with zero residual coupling; and writes the
//! semantic audit log. Messages for one interaction are processed strictly
//! in arrival order.

mod audit;
mod clock;
mod config;
mod registry;

pub use audit::{
    fold_states, load_audit_file, parse_audit_lines, verify_audit, AuditEvent, AuditLog,
    AuditRecord, AuditVerification, InvariantCheck,
};
pub use clock::{Clock, SystemClock, VirtualClock};
pub use config::{AdjudicatorKind, CoordinatorConfig};
pub use registry::CapabilityRegistry;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::negotiation::{
    clarify_round, compose, fallback_simplify, fallback_solidify, open_session, renegotiate,
    stabilize, CompositionPlan, ConvergenceDecision, CoreOntology, NegotiationError,
    NegotiationSession, PlanStep, RecordedOffer, SessionStatus, StabilizationOutcome, SubIntention,
};
use crate::protocol::{
    transition, AcceptPayload, CompletePayload, DissolveReason, Envelope, FailureKind,
    IntentPayload, InteractionContext, InteractionState, MessageType, OfferPayload, Payload,
    RejectPayload, Role,
};
use crate::security::{
    sign_envelope, verify_envelope, AgentIdentity, Challenge, ChallengeAuth, Claim, GrantStore,
    IdentityStore, Keypair, Policy, SessionToken,
};
use crate::semantics::{
    admit, blend_score, latency_score, normalize_judgments, Adjudicator, Capability,
    CandidateJudgment, CommandAdjudicator, LexicalAdjudicator, OutcomeSignal, PriorStore,
    SuitabilityDistribution,
};

#[derive(Debug, Clone, thiserror::Error)]
pub enum CoordinatorError {
    #[error("sender {0} is not authenticated")]
    Unauthenticated(String),
    #[error("unknown interaction {0}")]
    UnknownInteraction(String),
    #[error("interaction {0} already exists")]
    DuplicateInteraction(String),
    #[error("message id {0} already processed for this interaction")]
    DuplicateMessage(String),
    #[error("duplicate capability id {capability_id}")]
    DuplicateCapability { capability_id: String },
    #[error("capability {0} is not registered")]
    UnknownCapability(String),
    #[error("capability {capability_id} is not owned by {sender}")]
    NotOwner {
        capability_id: String,
        sender: String,
    },
    #[error("capability {0} was not admitted into this negotiation")]
    NotAdmitted(String),
    #[error("sender is not part of the plan's atomic accept set")]
    NotInAcceptSet,
    #[error("no composed plan to reference")]
    NoPlan,
    #[error("referenced plan {referenced} does not match the current plan {current}")]
    PlanMismatch { referenced: String, current: String },
    #[error("invalid offer: {0}")]
    OfferInvalid(String),
    #[error("authorization revoked or missing for this interaction")]
    AuthorizationRevoked,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("audit failure: {0}")]
    Audit(String),
    #[error("corrupt audit at line {line}: {detail}")]
    CorruptAudit { line: usize, detail: String },
    #[error("audit replay violation at seq {seq}: {detail}")]
    ReplayViolation { seq: u64, detail: String },
    #[error(transparent)]
    Protocol(#[from] crate::protocol::ProtocolError),
    #[error(transparent)]
    Security(#[from] crate::security::SecurityError),
    #[error(transparent)]
    Negotiation(#[from] NegotiationError),
    #[error(transparent)]
    Semantics(#[from] crate::semantics::SemanticsError),
}

/// An envelope addressed to one agent.
#[derive(Debug, Clone)]
pub struct Outbound {
    pub to: String,
    pub envelope: Envelope,
}

/// Everything a `submit` call produced: messages to deliver, dissolution
/// reports, and the rejection reason when the inbound message was refused.
#[derive(Debug, Default)]
pub struct Effects {
    pub outbound: Vec<Outbound>,
    pub dissolutions: Vec<DissolutionReport>,
    pub rejected: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClearedCounts {
    pub offers: usize,
    pub plans: usize,
    pub grants: usize,
    pub session: usize,
}

/// Outcome of one dissolution: what was cleared, and the residual
/// coupling left behind (always zero on a successful dissolution).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissolutionReport {
    pub interaction_id: String,
    pub reason: DissolveReason,
    pub artifacts_cleared: ClearedCounts,
    pub residual_coupling: u64,
}

#[derive(Debug, Clone)]
struct StepResult {
    owner: String,
    success: bool,
    latency_ticks: Option<u64>,
    signed: bool,
}

/// Per-interaction bookkeeping beyond the wire-visible context.
struct Interaction {
    context: InteractionContext,
    session: Option<NegotiationSession>,
    /// Ranked, admitted, policy-filtered judgments for the current epoch.
    admitted: Vec<CandidateJudgment>,
    capability_owner: BTreeMap<String, String>,
    solicited: BTreeSet<String>,
    responded: BTreeSet<String>,
    withdrawn: BTreeSet<String>,
    live_offers: BTreeMap<String, RecordedOffer>,
    accepts: BTreeMap<String, Envelope>,
    step_results: BTreeMap<String, StepResult>,
    simplify_count: u32,
    seen_message_ids: BTreeSet<String>,
    granted_agents: BTreeSet<String>,
    /// Set when the interaction was anchored to the core ontology.
    solid_operation: Option<String>,
}

impl Interaction {
    fn new(context: InteractionContext) -> Self {
        Interaction {
            context,
            session: None,
            admitted: Vec::new(),
            capability_owner: BTreeMap::new(),
            solicited: BTreeSet::new(),
            responded: BTreeSet::new(),
            withdrawn: BTreeSet::new(),
            live_offers: BTreeMap::new(),
            accepts: BTreeMap::new(),
            step_results: BTreeMap::new(),
            simplify_count: 0,
            seen_message_ids: BTreeSet::new(),
            granted_agents: BTreeSet::new(),
            solid_operation: None,
        }
    }

    fn state(&self) -> InteractionState {
        self.context.state
    }

    fn role_of(&self, sender: &str) -> Role {
        if sender == self.context.initiator {
            Role::Initiator
        } else {
            Role::Responder
        }
    }

    /// Admitted judgments whose capabilities have not been withdrawn.
    fn live_judgments(&self) -> Vec<CandidateJudgment> {
        self.admitted
            .iter()
            .filter(|j| !self.withdrawn.contains(&j.capability_id))
            .cloned()
            .collect()
    }

    fn all_solicited_responded(&self) -> bool {
        self.solicited.is_subset(&self.responded)
    }
}

/// Why the fallback ladder was entered.
#[derive(Debug, Clone)]
enum FallbackTrigger {
    EntropyBudget,
    Unresolvable(BTreeSet<String>),
    NoCandidates,
}

impl FallbackTrigger {
    fn label(&self) -> &'static str {
        match self {
            FallbackTrigger::EntropyBudget => "entropy_budget",
            FallbackTrigger::Unresolvable(_) => "unresolvable",
            FallbackTrigger::NoCandidates => "no_candidates",
        }
    }

    fn missing_keys(&self) -> Vec<String> {
        match self {
            FallbackTrigger::Unresolvable(keys) => keys.iter().cloned().collect(),
            _ => Vec::new(),
        }
    }
}

pub struct Coordinator {
    config: CoordinatorConfig,
    clock: Arc<dyn Clock>,
    keypair: Keypair,
    identities: IdentityStore,
    auth: ChallengeAuth,
    grants: GrantStore,
    policy: Policy,
    ontology: CoreOntology,
    registry: CapabilityRegistry,
    priors: PriorStore,
    adjudicator: Box<dyn Adjudicator>,
    interactions: BTreeMap<String, Interaction>,
    audit: AuditLog,
    msg_seq: u64,
}

impl Coordinator {
    pub fn new(config: CoordinatorConfig, clock: Arc<dyn Clock>) -> Result<Self, CoordinatorError> {
        config.validate()?;
        let keypair = match &config.coordinator_seed {
            Some(seed_hex) => Keypair::from_seed_hex(seed_hex)?,
            None => Keypair::generate(),
        };
        let policy = match &config.policy_path {
            Some(path) => Policy::load(path)?,
            None => Policy::default(),
        };
        let ontology = match &config.ontology_path {
            Some(path) => load_ontology(path)?,
            None => CoreOntology::default(),
        };
        let priors = match &config.prior_store_path {
            Some(path) => PriorStore::open(path)?,
            None => PriorStore::in_memory(),
        };
        let audit = match &config.audit_dir {
            Some(dir) => AuditLog::with_dir(dir)?,
            None => AuditLog::in_memory(),
        };
        let adjudicator: Box<dyn Adjudicator> = match &config.adjudicator {
            AdjudicatorKind::Lexical => Box::new(LexicalAdjudicator::default()),
            AdjudicatorKind::Command { command, args } => Box::new(CommandAdjudicator {
                command: command.clone(),
                args: args.clone(),
            }),
        };
        let auth = ChallengeAuth::new(config.challenge_ttl_ms, config.token_ttl_ms);
        Ok(Coordinator {
            config,
            clock,
            keypair,
            identities: IdentityStore::new(),
            auth,
            grants: GrantStore::new(),
            policy,
            ontology,
            registry: CapabilityRegistry::new(),
            priors,
            adjudicator,
            interactions: BTreeMap::new(),
            audit,
            msg_seq: 0,
        })
    }

    pub fn coordinator_id(&self) -> String {
        self.keypair.fingerprint()
    }

    pub fn now(&self) -> i64 {
        self.clock.now_ms()
    }

    pub fn audit_log(&self) -> &AuditLog {
        &self.audit
    }

    pub fn audit_query(&self, interaction_id: &str) -> Vec<&AuditRecord> {
        self.audit.query(interaction_id)
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    /// Replace the active policy (hot reload); returns the rule count.
    pub fn set_policy(&mut self, policy: Policy) -> usize {
        let n = policy.rules.len();
        self.policy = policy;
        n
    }

    pub fn set_ontology(&mut self, ontology: CoreOntology) {
        self.ontology = ontology;
    }

    pub fn interaction_state(&self, interaction_id: &str) -> Option<InteractionState> {
        self.interactions.get(interaction_id).map(|i| i.state())
    }

    pub fn interaction_context(&self, interaction_id: &str) -> Option<&InteractionContext> {
        self.interactions.get(interaction_id).map(|i| &i.context)
    }

    pub fn interaction_ids(&self) -> Vec<String> {
        self.interactions.keys().cloned().collect()
    }

    pub fn solid_operation(&self, interaction_id: &str) -> Option<String> {
        self.interactions
            .get(interaction_id)
            .and_then(|i| i.solid_operation.clone())
    }

    /// Live interactions in which the capability is currently engaged:
    /// admitted and not withdrawn, offering, or bound into the plan.
    pub fn interactions_engaging(&self, capability_id: &str) -> Vec<String> {
        self.interactions
            .iter()
            .filter(|(_, i)| {
                i.state() != InteractionState::Dissolved
                    && (i.live_offers.contains_key(capability_id)
                        || i.context
                            .plan
                            .as_ref()
                            .map(|p| p.step(capability_id).is_some())
                            .unwrap_or(false)
                        || (i.admitted.iter().any(|j| j.capability_id == capability_id)
                            && !i.withdrawn.contains(capability_id)))
            })
            .map(|(id, _)| id.clone())
            .collect()
    }

    // ------------------------------------------------------------------
    // Identity plane
    // ------------------------------------------------------------------

    pub fn enroll_agent(
        &mut self,
        public_key: &[u8],
        metadata: BTreeMap<String, String>,
    ) -> Result<AgentIdentity, CoordinatorError> {
        let now = self.clock.now_ms();
        Ok(self.identities.enroll(public_key, metadata, now)?)
    }

    pub fn issue_challenge(&mut self, agent_id: &str) -> Result<Challenge, CoordinatorError> {
        let now = self.clock.now_ms();
        Ok(self.auth.issue_challenge(&self.identities, agent_id, now)?)
    }

    pub fn verify_challenge_response(
        &mut self,
        challenge_id: &str,
        signature_hex: &str,
    ) -> Result<SessionToken, CoordinatorError> {
        let now = self.clock.now_ms();
        Ok(self
            .auth
            .verify_challenge_response(&self.identities, challenge_id, signature_hex, now)?)
    }

    /// Register a capability under a valid session token. Registration is
    /// visible to subsequent adjudications only.
    pub fn register_capability(
        &mut self,
        token: &str,
        capability: Capability,
    ) -> Result<String, CoordinatorError> {
        let now = self.clock.now_ms();
        let agent_id = self.auth.validate_token(token, now)?;
        if capability.owner != agent_id {
            return Err(CoordinatorError::NotOwner {
                capability_id: capability.capability_id,
                sender: agent_id,
            });
        }
        self.registry.register(capability, now)
    }

    pub fn identity(&self, agent_id: &str) -> Option<&AgentIdentity> {
        self.identities.get(agent_id)
    }

    /// Resolve a live session token to its agent id.
    pub fn token_agent(&self, token: &str, now: i64) -> Option<String> {
        self.auth.validate_token(token, now).ok()
    }

    // ------------------------------------------------------------------
    // Message pipeline
    // ------------------------------------------------------------------

    /// Route one envelope through the pipeline. Stage errors never mutate
    /// interaction state; they surface as a structured Reject back to the
    /// sender plus the `rejected` field of the effects.
    pub fn submit(&mut self, envelope: Envelope) -> Effects {
        let mut effects = Effects::default();
        let sender = envelope.sender.clone();
        let interaction_id = envelope.interaction_id.clone();
        let message_id = envelope.message_id.clone();
        if let Err(e) = self.process(envelope, &mut effects) {
            let reason = e.to_string();
            let reject = self.build_envelope(
                &interaction_id,
                Payload::Reject(RejectPayload {
                    capability_id: None,
                    plan_id: None,
                    failure: None,
                    note: Some(reason.clone()),
                    in_reply_to: Some(message_id),
                }),
            );
            effects.outbound.push(Outbound {
                to: sender,
                envelope: reject,
            });
            effects.rejected = Some(reason);
        }
        effects
    }

    fn process(&mut self, envelope: Envelope, effects: &mut Effects) -> Result<(), CoordinatorError> {
        let now = self.clock.now_ms();
        let sender = envelope.sender.clone();
        if !self.auth.is_authenticated(&sender, now) {
            return Err(CoordinatorError::Unauthenticated(sender));
        }
        let identity = self
            .identities
            .get(&sender)
            .cloned()
            .ok_or_else(|| CoordinatorError::Unauthenticated(sender.clone()))?;
        verify_envelope(&envelope, &identity)?;

        match envelope.message_type() {
            MessageType::Intent => self.handle_intent(envelope, now, effects),
            MessageType::Offer => self.with_interaction(envelope, now, effects, Self::handle_offer),
            MessageType::Accept => self.with_interaction(envelope, now, effects, Self::handle_accept),
            MessageType::Reject => self.with_interaction(envelope, now, effects, Self::handle_reject),
            MessageType::Execute => {
                self.with_interaction(envelope, now, effects, Self::handle_execute)
            }
            MessageType::Complete => {
                self.with_interaction(envelope, now, effects, Self::handle_complete)
            }
            MessageType::Dissolve => {
                self.with_interaction(envelope, now, effects, Self::handle_dissolve)
            }
        }
    }

    /// Take the interaction out of the table, run the handler, put it
    /// back. Handlers therefore get `&mut self` and the interaction
    /// without aliasing.
    fn with_interaction(
        &mut self,
        envelope: Envelope,
        now: i64,
        effects: &mut Effects,
        handler: fn(
            &mut Self,
            &mut Interaction,
            Envelope,
            i64,
            &mut Effects,
        ) -> Result<(), CoordinatorError>,
    ) -> Result<(), CoordinatorError> {
        let id = envelope.interaction_id.clone();
        let mut interaction = self
            .interactions
            .remove(&id)
            .ok_or_else(|| CoordinatorError::UnknownInteraction(id.clone()))?;
        if !interaction.seen_message_ids.insert(envelope.message_id.clone()) {
            self.interactions.insert(id, interaction);
            return Err(CoordinatorError::DuplicateMessage(envelope.message_id));
        }
        let result = handler(self, &mut interaction, envelope, now, effects);
        self.interactions.insert(id, interaction);
        result
    }

    fn handle_intent(
        &mut self,
        envelope: Envelope,
        now: i64,
        effects: &mut Effects,
    ) -> Result<(), CoordinatorError> {
        let id = envelope.interaction_id.clone();
        if self.interactions.contains_key(&id) {
            return Err(CoordinatorError::DuplicateInteraction(id));
        }
        let Payload::Intent(intent) = envelope.payload.clone() else {
            unreachable!("payload checked at decode");
        };
        let mut interaction = Interaction::new(InteractionContext::new(
            id.clone(),
            envelope.sender.clone(),
            intent.clone(),
            now,
        ));
        interaction.seen_message_ids.insert(envelope.message_id.clone());
        self.audit.append(
            &id,
            AuditEvent::IntentReceived,
            json!({
                "initiator": envelope.sender,
                "goal_text": intent.goal_text,
                "constraints": intent.constraints,
                "claims": intent.claims,
                "deadline": intent.deadline,
                "context_keys": intent.context.facts.keys().collect::<Vec<_>>(),
            }),
            now,
        )?;

        // Policies apply prior to negotiation: evaluate the initiator's
        // claimed scopes first.
        if !intent.claims.is_empty() {
            let claims: Vec<Claim> = intent
                .claims
                .iter()
                .map(|scope| Claim {
                    scope: scope.clone(),
                    constraints: BTreeMap::new(),
                    claimant: envelope.sender.clone(),
                })
                .collect();
            match self.grants.evaluate_and_issue(
                &claims,
                &intent,
                &intent.context,
                &self.policy,
                &id,
                &envelope.sender,
                now,
            ) {
                Ok((grant, decisions)) => {
                    self.audit.append(
                        &id,
                        AuditEvent::PolicyDecision,
                        json!({
                            "claimant": envelope.sender,
                            "decisions": decisions,
                            "granted": grant.scopes,
                            "grant_id": grant.grant_id,
                        }),
                        now,
                    )?;
                    interaction.context.grants.push(grant.grant_id.clone());
                    interaction.granted_agents.insert(envelope.sender.clone());
                }
                Err(crate::security::SecurityError::AuthorizationDenied { reasons }) => {
                    self.audit.append(
                        &id,
                        AuditEvent::PolicyDecision,
                        json!({
                            "claimant": envelope.sender,
                            "decisions": reasons
                                .iter()
                                .map(|(scope, reason)| json!({
                                    "scope": scope,
                                    "allowed": false,
                                    "reason": reason,
                                }))
                                .collect::<Vec<_>>(),
                            "granted": [],
                        }),
                        now,
                    )?;
                    let report = self.dissolve_interaction(
                        &mut interaction,
                        DissolveReason::PolicyRevocation,
                        now,
                    )?;
                    effects.dissolutions.push(report);
                    self.interactions.insert(id.clone(), interaction);
                    let reject = self.build_envelope(
                        &id,
                        Payload::Reject(RejectPayload {
                            capability_id: None,
                            plan_id: None,
                            failure: Some(FailureKind::ScopeInsufficient),
                            note: Some("authorization denied".to_string()),
                            in_reply_to: Some(envelope.message_id),
                        }),
                    );
                    effects.outbound.push(Outbound {
                        to: envelope.sender,
                        envelope: reject,
                    });
                    return Ok(());
                }
                Err(e) => return Err(e.into()),
            }
        }

        let result = self.start_epoch(&mut interaction, now, effects);
        self.interactions.insert(id, interaction);
        result
    }

    /// Adjudicate the current intent, blend priors, admit, apply policy
    /// to capability owners, open the negotiation session, and solicit
    /// offers. Shared by intake and simplified re-entry.
    fn start_epoch(
        &mut self,
        interaction: &mut Interaction,
        now: i64,
        effects: &mut Effects,
    ) -> Result<(), CoordinatorError> {
        let id = interaction.context.interaction_id.clone();
        let intent = interaction.context.intent.clone();
        let capabilities = self.registry.all();

        interaction.session = None;
        interaction.admitted.clear();
        interaction.capability_owner.clear();
        interaction.solicited.clear();
        interaction.responded.clear();
        interaction.withdrawn.clear();
        interaction.live_offers.clear();
        interaction.context.offers.clear();
        interaction.accepts.clear();

        if capabilities.is_empty() {
            return self.fallback_ladder(interaction, FallbackTrigger::NoCandidates, now, effects);
        }

        let mut judgments = self
            .adjudicator
            .adjudicate(&intent, &intent.context, &capabilities)?;
        let alpha = self.config.alpha;
        for j in &mut judgments {
            j.blended = Some(blend_score(j.suitability, self.priors.rho(&j.capability_id), alpha)?);
        }
        let owner_of = |cap_id: &str| -> String {
            capabilities
                .iter()
                .find(|c| c.capability_id == cap_id)
                .map(|c| c.owner.clone())
                .unwrap_or_default()
        };
        self.audit.append(
            &id,
            AuditEvent::Adjudicated,
            json!({
                "judgments": judgments
                    .iter()
                    .map(|j| json!({
                        "capability_id": j.capability_id,
                        "owner": owner_of(&j.capability_id),
                        "suitability": j.suitability,
                        "blended": j.blended,
                        "rationale": j.rationale,
                    }))
                    .collect::<Vec<_>>(),
            }),
            now,
        )?;

        let mut admitted = admit(&judgments, &self.config.adjudicator_config());
        // The state machine forbids initiator offers, so the initiator's
        // own capabilities never enter its negotiations.
        admitted.retain(|j| {
            self.registry.owner_of(&j.capability_id) != Some(interaction.context.initiator.as_str())
        });
        if admitted.is_empty() {
            return self.fallback_ladder(interaction, FallbackTrigger::NoCandidates, now, effects);
        }

        // Policy gates capability owners before they enter negotiation.
        let mut filtered: Vec<CandidateJudgment> = Vec::new();
        for judgment in admitted {
            let capability = self
                .registry
                .capability(&judgment.capability_id)
                .cloned()
                .ok_or_else(|| CoordinatorError::UnknownCapability(judgment.capability_id.clone()))?;
            let include = if capability.declared_scopes.is_empty()
                || interaction.granted_agents.contains(&capability.owner)
            {
                true
            } else {
                let claims: Vec<Claim> = capability
                    .declared_scopes
                    .iter()
                    .map(|scope| Claim {
                        scope: scope.clone(),
                        constraints: BTreeMap::new(),
                        claimant: capability.owner.clone(),
                    })
                    .collect();
                match self.grants.evaluate_and_issue(
                    &claims,
                    &intent,
                    &intent.context,
                    &self.policy,
                    &id,
                    &capability.owner,
                    now,
                ) {
                    Ok((grant, decisions)) => {
                        self.audit.append(
                            &id,
                            AuditEvent::PolicyDecision,
                            json!({
                                "claimant": capability.owner,
                                "capability_id": capability.capability_id,
                                "decisions": decisions,
                                "granted": grant.scopes,
                                "grant_id": grant.grant_id,
                            }),
                            now,
                        )?;
                        interaction.context.grants.push(grant.grant_id.clone());
                        interaction.granted_agents.insert(capability.owner.clone());
                        true
                    }
                    Err(crate::security::SecurityError::AuthorizationDenied { reasons }) => {
                        self.audit.append(
                            &id,
                            AuditEvent::PolicyDecision,
                            json!({
                                "claimant": capability.owner,
                                "capability_id": capability.capability_id,
                                "decisions": reasons
                                    .iter()
                                    .map(|(scope, reason)| json!({
                                        "scope": scope,
                                        "allowed": false,
                                        "reason": reason,
                                    }))
                                    .collect::<Vec<_>>(),
                                "granted": [],
                            }),
                            now,
                        )?;
                        false
                    }
                    Err(e) => return Err(e.into()),
                }
            };
            if include {
                interaction
                    .capability_owner
                    .insert(judgment.capability_id.clone(), capability.owner.clone());
                filtered.push(judgment);
            }
        }

        if filtered.is_empty() {
            return self.fallback_ladder(interaction, FallbackTrigger::NoCandidates, now, effects);
        }
        let dist = match normalize_judgments(&filtered) {
            Ok(d) => d,
            Err(crate::semantics::SemanticsError::NoViableCandidates) => {
                return self.fallback_ladder(interaction, FallbackTrigger::NoCandidates, now, effects);
            }
            Err(e) => return Err(e.into()),
        };
        let session = open_session(&id, dist, self.config.tau, self.config.n_max)?;
        interaction.context.entropy_trace = session.entropy_trace.clone();
        interaction.session = Some(session);
        interaction.admitted = filtered;

        // Solicit offers from owners of admitted capabilities only,
        // with private context facts redacted.
        let owners: BTreeSet<String> = interaction.capability_owner.values().cloned().collect();
        interaction.solicited = owners.clone();
        let solicitation = IntentPayload {
            goal_text: intent.goal_text.clone(),
            constraints: intent.constraints.clone(),
            context: intent.context.redacted(),
            deadline: intent.deadline,
            priority_order: intent.priority_order.clone(),
            claims: Vec::new(),
        };
        for owner in owners {
            let envelope = self.build_envelope(&id, Payload::Intent(solicitation.clone()));
            effects.outbound.push(Outbound {
                to: owner,
                envelope,
            });
        }
        Ok(())
    }

    fn handle_offer(
        &mut self,
        interaction: &mut Interaction,
        envelope: Envelope,
        now: i64,
        effects: &mut Effects,
    ) -> Result<(), CoordinatorError> {
        let Payload::Offer(offer) = envelope.payload.clone() else {
            unreachable!("payload checked at decode");
        };
        let role = interaction.role_of(&envelope.sender);
        let next_state = transition(interaction.state(), MessageType::Offer, role)
            .map_err(crate::protocol::ProtocolError::from)?;

        let cap_id = offer.capability_id.clone();
        if !interaction.admitted.iter().any(|j| j.capability_id == cap_id)
            || interaction.withdrawn.contains(&cap_id)
        {
            return Err(CoordinatorError::NotAdmitted(cap_id));
        }
        let owner = interaction
            .capability_owner
            .get(&cap_id)
            .cloned()
            .ok_or_else(|| CoordinatorError::UnknownCapability(cap_id.clone()))?;
        if owner != envelope.sender {
            return Err(CoordinatorError::NotOwner {
                capability_id: cap_id,
                sender: envelope.sender,
            });
        }
        let keys = interaction.context.intent.constraint_keys();
        if !offer.coverage.is_subset(&keys) {
            return Err(CoordinatorError::OfferInvalid(format!(
                "coverage {:?} includes keys outside the intent",
                offer.coverage
            )));
        }
        let is_partial = offer.coverage != keys;
        if offer.partial != is_partial {
            return Err(CoordinatorError::OfferInvalid(
                "partial flag does not match coverage".to_string(),
            ));
        }
        if offer.expiry < now {
            return Err(CoordinatorError::OfferInvalid("offer expired".to_string()));
        }

        interaction.context.state = next_state;
        interaction.context.participants.insert(envelope.sender.clone());
        interaction.responded.insert(envelope.sender.clone());
        interaction.context.offers.push(offer.clone());
        interaction.live_offers.insert(
            cap_id,
            RecordedOffer {
                payload: offer,
                owner: envelope.sender.clone(),
            },
        );
        self.settle(interaction, now, effects)
    }

    fn handle_reject(
        &mut self,
        interaction: &mut Interaction,
        envelope: Envelope,
        now: i64,
        effects: &mut Effects,
    ) -> Result<(), CoordinatorError> {
        let Payload::Reject(reject) = envelope.payload.clone() else {
            unreachable!("payload checked at decode");
        };
        let role = interaction.role_of(&envelope.sender);
        let state = interaction.state();
        let next_state = transition(state, MessageType::Reject, role)
            .map_err(crate::protocol::ProtocolError::from)?;

        match state {
            InteractionState::Proposed
            | InteractionState::Negotiating
            | InteractionState::Renegotiating => {
                // Candidate-scoped rejection: a responder declining or
                // withdrawing, or the initiator rejecting one candidate.
                interaction.context.state = next_state;
                if role == Role::Responder {
                    interaction.responded.insert(envelope.sender.clone());
                }
                let mut withdrawn: BTreeSet<String> = BTreeSet::new();
                if let Some(cap_id) = &reject.capability_id {
                    withdrawn.insert(cap_id.clone());
                } else if role == Role::Responder {
                    // Blanket decline: every admitted capability of this agent.
                    for j in &interaction.admitted {
                        if interaction.capability_owner.get(&j.capability_id)
                            == Some(&envelope.sender)
                        {
                            withdrawn.insert(j.capability_id.clone());
                        }
                    }
                }
                if let (Some(plan_id), Some(plan)) = (&reject.plan_id, &interaction.context.plan) {
                    if *plan_id == plan.plan_id
                        && plan.atomic_accept_set.contains(&envelope.sender)
                    {
                        // A required accepter declined the composed plan:
                        // its steps are withdrawn and the plan is void.
                        for step in &plan.steps {
                            if step.owner == envelope.sender {
                                withdrawn.insert(step.capability_id.clone());
                            }
                        }
                    }
                }
                for cap in &withdrawn {
                    interaction.withdrawn.insert(cap.clone());
                    interaction.live_offers.remove(cap);
                }
                // A plan referencing a withdrawn capability is void;
                // settlement recomposes from the surviving offers.
                if let Some(plan) = &interaction.context.plan {
                    if plan.steps.iter().any(|s| withdrawn.contains(&s.capability_id)) {
                        interaction.context.plan = None;
                        interaction.accepts.clear();
                    }
                }
                self.settle(interaction, now, effects)
            }
            InteractionState::Stabilized | InteractionState::Executing => {
                // Failure signal: renegotiate without invalidating the context.
                let kind = reject.failure.unwrap_or(FailureKind::CapabilityUnavailable);
                interaction.context.state = next_state;
                self.audit.append(
                    &interaction.context.interaction_id,
                    AuditEvent::FailureSignal,
                    json!({
                        "kind": kind,
                        "capability_id": reject.capability_id,
                        "by": envelope.sender,
                    }),
                    now,
                )?;
                let mut withdrawn: BTreeSet<String> = BTreeSet::new();
                if let Some(cap_id) = &reject.capability_id {
                    withdrawn.insert(cap_id.clone());
                } else {
                    for j in &interaction.admitted {
                        if interaction.capability_owner.get(&j.capability_id)
                            == Some(&envelope.sender)
                        {
                            withdrawn.insert(j.capability_id.clone());
                        }
                    }
                }
                self.renegotiate_interaction(interaction, kind, withdrawn, now, effects)
            }
            _ => unreachable!("transition() rejected other states"),
        }
    }

    fn handle_accept(
        &mut self,
        interaction: &mut Interaction,
        envelope: Envelope,
        now: i64,
        effects: &mut Effects,
    ) -> Result<(), CoordinatorError> {
        let Payload::Accept(accept) = envelope.payload.clone() else {
            unreachable!("payload checked at decode");
        };
        let role = interaction.role_of(&envelope.sender);
        let next_state = transition(interaction.state(), MessageType::Accept, role)
            .map_err(crate::protocol::ProtocolError::from)?;
        let plan = interaction
            .context
            .plan
            .clone()
            .ok_or(CoordinatorError::NoPlan)?;
        if accept.plan_id != plan.plan_id {
            return Err(CoordinatorError::PlanMismatch {
                referenced: accept.plan_id,
                current: plan.plan_id,
            });
        }
        if !plan.atomic_accept_set.contains(&envelope.sender) {
            return Err(CoordinatorError::NotInAcceptSet);
        }
        interaction
            .accepts
            .insert(envelope.sender.clone(), envelope.clone());

        let accepts: Vec<Envelope> = interaction.accepts.values().cloned().collect();
        match stabilize(&plan, &accepts, &self.identities)? {
            StabilizationOutcome::Stabilized => {
                interaction.context.state = next_state;
                let id = interaction.context.interaction_id.clone();
                self.audit.append(
                    &id,
                    AuditEvent::Stabilized,
                    json!({
                        "plan_id": plan.plan_id,
                        "accepts": plan
                            .atomic_accept_set
                            .iter()
                            .map(|agent| json!({"agent": agent, "signed": true}))
                            .collect::<Vec<_>>(),
                        "pre_agreed": false,
                    }),
                    now,
                )?;
                // Notify the initiator that agreement is complete.
                let notice = self.build_signed_envelope(
                    &id,
                    Payload::Accept(AcceptPayload {
                        plan_id: plan.plan_id.clone(),
                    }),
                )?;
                effects.outbound.push(Outbound {
                    to: interaction.context.initiator.clone(),
                    envelope: notice,
                });
            }
            StabilizationOutcome::Pending { .. } => {
                // Atomicity: partial acceptance authorizes nothing.
            }
        }
        Ok(())
    }

    fn handle_execute(
        &mut self,
        interaction: &mut Interaction,
        envelope: Envelope,
        now: i64,
        effects: &mut Effects,
    ) -> Result<(), CoordinatorError> {
        let Payload::Execute(execute) = envelope.payload.clone() else {
            unreachable!("payload checked at decode");
        };
        let id = interaction.context.interaction_id.clone();

        // Claim scopes are checked before any lifecycle change.
        if !interaction.context.intent.claims.is_empty()
            && self
                .grants
                .live_grants_for(&interaction.context.initiator, &id)
                == 0
        {
            return Err(CoordinatorError::AuthorizationRevoked);
        }
        let role = interaction.role_of(&envelope.sender);
        let next_state = transition(interaction.state(), MessageType::Execute, role)
            .map_err(crate::protocol::ProtocolError::from)?;
        let plan = interaction
            .context
            .plan
            .clone()
            .ok_or(CoordinatorError::NoPlan)?;
        if execute.plan_id != plan.plan_id {
            return Err(CoordinatorError::PlanMismatch {
                referenced: execute.plan_id,
                current: plan.plan_id,
            });
        }
        // Step owners must still hold live grants for their declared scopes.
        for owner in plan.step_owners() {
            if owner == self.coordinator_id() {
                continue;
            }
            let needs_grant = plan.steps.iter().any(|s| {
                s.owner == owner
                    && self
                        .registry
                        .capability(&s.capability_id)
                        .map(|c| !c.declared_scopes.is_empty())
                        .unwrap_or(false)
            });
            if needs_grant && self.grants.live_grants_for(&owner, &id) == 0 {
                return Err(CoordinatorError::AuthorizationRevoked);
            }
        }

        interaction.context.state = next_state;
        interaction.step_results.clear();
        self.audit.append(
            &id,
            AuditEvent::ExecutionStarted,
            json!({
                "plan_id": plan.plan_id,
                "by": envelope.sender,
                "signed": true,
                "steps": plan.steps.len(),
            }),
            now,
        )?;

        // Dispatch steps in plan order. Core-ontology steps execute
        // deterministically inside the coordinator.
        for step in &plan.steps {
            if step.owner == self.coordinator_id() {
                interaction.step_results.insert(
                    step.capability_id.clone(),
                    StepResult {
                        owner: step.owner.clone(),
                        success: true,
                        latency_ticks: Some(0),
                        signed: true,
                    },
                );
            } else {
                let dispatch = self.build_signed_envelope(
                    &id,
                    Payload::Execute(crate::protocol::ExecutePayload {
                        plan_id: plan.plan_id.clone(),
                        capability_id: Some(step.capability_id.clone()),
                    }),
                )?;
                effects.outbound.push(Outbound {
                    to: step.owner.clone(),
                    envelope: dispatch,
                });
            }
        }
        self.maybe_complete(interaction, now, effects)
    }

    fn handle_complete(
        &mut self,
        interaction: &mut Interaction,
        envelope: Envelope,
        now: i64,
        effects: &mut Effects,
    ) -> Result<(), CoordinatorError> {
        let Payload::Complete(complete) = envelope.payload.clone() else {
            unreachable!("payload checked at decode");
        };
        // Validate against the executing plan before any mutation.
        if interaction.state() != InteractionState::Executing {
            return Err(crate::protocol::ProtocolError::from(
                crate::protocol::IllegalTransition {
                    state: interaction.state(),
                    message: MessageType::Complete,
                },
            )
            .into());
        }
        let plan = interaction
            .context
            .plan
            .clone()
            .ok_or(CoordinatorError::NoPlan)?;
        if complete.plan_id != plan.plan_id {
            return Err(CoordinatorError::PlanMismatch {
                referenced: complete.plan_id,
                current: plan.plan_id,
            });
        }
        let step = plan
            .step(&complete.capability_id)
            .ok_or_else(|| CoordinatorError::UnknownCapability(complete.capability_id.clone()))?;
        if step.owner != envelope.sender {
            return Err(CoordinatorError::NotOwner {
                capability_id: complete.capability_id.clone(),
                sender: envelope.sender,
            });
        }
        interaction.step_results.insert(
            complete.capability_id.clone(),
            StepResult {
                owner: step.owner.clone(),
                success: complete.success,
                latency_ticks: complete.latency_ticks,
                signed: true,
            },
        );
        self.maybe_complete(interaction, now, effects)
    }

    /// Apply the Completed transition once every plan step has reported,
    /// update outcome priors exactly once per participating capability,
    /// and (by default) dissolve.
    fn maybe_complete(
        &mut self,
        interaction: &mut Interaction,
        now: i64,
        effects: &mut Effects,
    ) -> Result<(), CoordinatorError> {
        let Some(plan) = interaction.context.plan.clone() else {
            return Ok(());
        };
        if interaction.step_results.len() < plan.steps.len() {
            return Ok(());
        }
        let by_coordinator = plan.steps.iter().all(|s| s.owner == self.coordinator_id());
        let role = if by_coordinator {
            Role::Coordinator
        } else {
            Role::Responder
        };
        let next_state = transition(interaction.state(), MessageType::Complete, role)
            .map_err(crate::protocol::ProtocolError::from)?;
        interaction.context.state = next_state;
        interaction.context.t_ack = Some(now);

        let id = interaction.context.interaction_id.clone();
        let config = self.config.adjudicator_config();
        let mut steps_detail = Vec::new();
        let mut all_ok = true;
        for step in &plan.steps {
            let result = interaction
                .step_results
                .get(&step.capability_id)
                .expect("all steps reported");
            all_ok &= result.success;
            let rho = if result.owner == self.coordinator_id() {
                None
            } else {
                let outcome = OutcomeSignal {
                    success: result.success,
                    latency_score: result
                        .latency_ticks
                        .map(|t| latency_score(t, self.config.latency_budget_ticks)),
                    consistency_score: None,
                }
                .value();
                Some(
                    self.priors
                        .record(&step.capability_id, outcome, &config, now)?
                        .rho,
                )
            };
            steps_detail.push(json!({
                "capability_id": step.capability_id,
                "owner": result.owner,
                "success": result.success,
                "latency_ticks": result.latency_ticks,
                "signed": result.signed,
                "rho": rho,
            }));
        }
        self.audit.append(
            &id,
            AuditEvent::ExecutionCompleted,
            json!({
                "plan_id": plan.plan_id,
                "steps": steps_detail,
                "by_coordinator": by_coordinator,
                "success": all_ok,
            }),
            now,
        )?;

        // Aggregate completion notice to the initiator.
        let notice = self.build_signed_envelope(
            &id,
            Payload::Complete(CompletePayload {
                plan_id: plan.plan_id.clone(),
                capability_id: plan.plan_id.clone(),
                success: all_ok,
                latency_ticks: None,
                output: None,
            }),
        )?;
        effects.outbound.push(Outbound {
            to: interaction.context.initiator.clone(),
            envelope: notice,
        });

        if self.config.auto_dissolve_completed {
            let report = self.dissolve_interaction(interaction, DissolveReason::Completed, now)?;
            effects.dissolutions.push(report);
        }
        Ok(())
    }

    fn handle_dissolve(
        &mut self,
        interaction: &mut Interaction,
        envelope: Envelope,
        now: i64,
        effects: &mut Effects,
    ) -> Result<(), CoordinatorError> {
        let Payload::Dissolve(dissolve) = envelope.payload.clone() else {
            unreachable!("payload checked at decode");
        };
        if interaction.state() == InteractionState::Dissolved {
            // Idempotent no-op.
            effects.dissolutions.push(DissolutionReport {
                interaction_id: interaction.context.interaction_id.clone(),
                reason: dissolve.reason,
                artifacts_cleared: ClearedCounts {
                    offers: 0,
                    plans: 0,
                    grants: 0,
                    session: 0,
                },
                residual_coupling: 0,
            });
            return Ok(());
        }
        let role = interaction.role_of(&envelope.sender);
        transition(interaction.state(), MessageType::Dissolve, role)
            .map_err(crate::protocol::ProtocolError::from)?;
        let report = self.dissolve_interaction(interaction, dissolve.reason, now)?;
        effects.dissolutions.push(report);
        Ok(())
    }

    // ------------------------------------------------------------------
    // Negotiation mechanics
    // ------------------------------------------------------------------

    /// Settle the negotiation after a response: try to compose over the
    /// live offers; otherwise record a narrowing round if the candidate
    /// set shrank; otherwise fall back when nothing more can arrive.
    fn settle(
        &mut self,
        interaction: &mut Interaction,
        now: i64,
        effects: &mut Effects,
    ) -> Result<(), CoordinatorError> {
        if matches!(
            interaction.state(),
            InteractionState::Proposed | InteractionState::Renegotiating
        ) {
            // Declines before the first offer only narrow the pending set;
            // negotiation has not (re)opened yet.
            if interaction.all_solicited_responded() && interaction.live_offers.is_empty() {
                return self.fallback_ladder(
                    interaction,
                    FallbackTrigger::NoCandidates,
                    now,
                    effects,
                );
            }
            return Ok(());
        }
        if interaction.state() != InteractionState::Negotiating {
            return Ok(());
        }
        if interaction.context.plan.is_some() {
            // A plan is already awaiting accepts.
            return Ok(());
        }

        let id = interaction.context.interaction_id.clone();
        let live_judgments = interaction.live_judgments();
        let offers: Vec<RecordedOffer> = interaction.live_offers.values().cloned().collect();

        match compose(&interaction.context.intent, &offers, &live_judgments) {
            Ok(plan) => {
                // Composition collapses semantic uncertainty onto the plan.
                let collapse = SuitabilityDistribution::point_mass(plan.plan_id.clone());
                let (round, entropy_now, delta) = match &interaction.session {
                    Some(session) if session.status == SessionStatus::Open => {
                        let (next, report) = clarify_round(session, collapse)?;
                        interaction.context.entropy_trace = next.entropy_trace.clone();
                        let out = (next.round, report.entropy, report.delta);
                        interaction.session = Some(next);
                        out
                    }
                    Some(session) => (session.round, 0.0, session.latest_entropy()),
                    None => (0, 0.0, 0.0),
                };
                self.audit.append(
                    &id,
                    AuditEvent::RoundCompleted,
                    json!({
                        "round": round,
                        "entropy": entropy_now,
                        "delta": delta,
                        "converged": true,
                        "structures": [plan.plan_id],
                    }),
                    now,
                )?;
                self.audit.append(
                    &id,
                    AuditEvent::PlanComposed,
                    json!({
                        "plan_id": plan.plan_id,
                        "steps": plan
                            .steps
                            .iter()
                            .map(|s| json!({
                                "capability_id": s.capability_id,
                                "owner": s.owner,
                                "keys": s.sub_intention.constraint_keys,
                            }))
                            .collect::<Vec<_>>(),
                        "accept_set": plan.atomic_accept_set,
                        "pre_agreed": false,
                    }),
                    now,
                )?;
                interaction.context.plan = Some(plan.clone());
                interaction.accepts.clear();

                // Propose the composed plan to every required accepter.
                let plan_value = serde_json::to_value(&plan)
                    .map_err(|e| CoordinatorError::Audit(e.to_string()))?;
                for agent in &plan.atomic_accept_set {
                    let proposal = self.build_envelope(
                        &id,
                        Payload::Offer(OfferPayload {
                            capability_id: plan.plan_id.clone(),
                            coverage: plan.coverage.clone(),
                            partial: false,
                            terms: BTreeMap::from([("plan".to_string(), plan_value.clone())]),
                            expiry: now + self.config.proposal_ttl_ms,
                        }),
                    );
                    effects.outbound.push(Outbound {
                        to: agent.clone(),
                        envelope: proposal,
                    });
                }
                Ok(())
            }
            Err(NegotiationError::Unresolvable { missing_keys }) => {
                // Narrowing round: candidates that withdrew since the last
                // recorded round still reduce uncertainty.
                if let Some(session) = interaction.session.clone() {
                    if session.status == SessionStatus::Open {
                        if let Ok(revised) = normalize_judgments(&live_judgments) {
                            if revised != session.live_candidates {
                                let (next, report) = clarify_round(&session, revised)?;
                                interaction.context.entropy_trace = next.entropy_trace.clone();
                                let event = if report.non_progress {
                                    AuditEvent::NonProgress
                                } else {
                                    AuditEvent::RoundCompleted
                                };
                                self.audit.append(
                                    &id,
                                    event,
                                    json!({
                                        "round": report.round,
                                        "entropy": report.entropy,
                                        "delta": report.delta,
                                        "converged": false,
                                        "structures": next.live_candidates.ids().collect::<Vec<_>>(),
                                    }),
                                    now,
                                )?;
                                let decision = report.decision;
                                interaction.session = Some(next);
                                if decision == ConvergenceDecision::TriggerFallback {
                                    return self.fallback_ladder(
                                        interaction,
                                        FallbackTrigger::EntropyBudget,
                                        now,
                                        effects,
                                    );
                                }
                            }
                        }
                    }
                }
                if live_judgments.is_empty() {
                    return self.fallback_ladder(
                        interaction,
                        FallbackTrigger::NoCandidates,
                        now,
                        effects,
                    );
                }
                if interaction.all_solicited_responded() {
                    // Nothing more is coming; the cover is impossible.
                    return self.fallback_ladder(
                        interaction,
                        FallbackTrigger::Unresolvable(missing_keys),
                        now,
                        effects,
                    );
                }
                Ok(())
            }
            Err(e) => Err(e.into()),
        }
    }

    /// The deterministic fallback ladder: recursive simplification while
    /// budget remains and a constraint can be dropped, then solidification
    /// over the core ontology, then dissolution.
    fn fallback_ladder(
        &mut self,
        interaction: &mut Interaction,
        trigger: FallbackTrigger,
        now: i64,
        effects: &mut Effects,
    ) -> Result<(), CoordinatorError> {
        let id = interaction.context.interaction_id.clone();
        if let Some(session) = &mut interaction.session {
            session.status = SessionStatus::FallbackTriggered;
        }

        if interaction.simplify_count < self.config.simplify_max {
            match fallback_simplify(&interaction.context.intent) {
                Ok(simplified) => {
                    let dropped: Vec<String> = interaction
                        .context
                        .intent
                        .constraint_keys()
                        .difference(&simplified.constraint_keys())
                        .cloned()
                        .collect();
                    interaction.simplify_count += 1;
                    self.audit.append(
                        &id,
                        AuditEvent::FallbackTriggered,
                        json!({
                            "mode": crate::negotiation::FallbackMode::RecursiveSimplification,
                            "trigger": trigger.label(),
                            "missing_keys": trigger.missing_keys(),
                            "dropped_keys": dropped,
                            "attempt": interaction.simplify_count,
                        }),
                        now,
                    )?;
                    interaction.context.intent = simplified;
                    return self.start_epoch(interaction, now, effects);
                }
                Err(NegotiationError::NothingToSimplify) => {}
                Err(e) => return Err(e.into()),
            }
        }

        match fallback_solidify(&interaction.context.intent, &self.ontology) {
            Ok(invocation) => {
                self.audit.append(
                    &id,
                    AuditEvent::FallbackTriggered,
                    json!({
                        "mode": crate::negotiation::FallbackMode::Solidification,
                        "trigger": trigger.label(),
                        "missing_keys": trigger.missing_keys(),
                        "operation": invocation.operation,
                    }),
                    now,
                )?;
                let keys = interaction.context.intent.constraint_keys();
                let step = PlanStep {
                    sub_intention: SubIntention {
                        constraint_keys: keys.clone(),
                        goal_fragment: interaction.context.intent.goal_text.clone(),
                    },
                    capability_id: format!("core:{}", invocation.operation),
                    owner: self.coordinator_id(),
                    terms: invocation.args.clone(),
                };
                let plan = CompositionPlan {
                    plan_id: format!("p-solid-{id}"),
                    steps: vec![step],
                    coverage: keys,
                    atomic_accept_set: BTreeSet::new(),
                };
                self.audit.append(
                    &id,
                    AuditEvent::PlanComposed,
                    json!({
                        "plan_id": plan.plan_id,
                        "steps": plan
                            .steps
                            .iter()
                            .map(|s| json!({
                                "capability_id": s.capability_id,
                                "owner": s.owner,
                                "keys": s.sub_intention.constraint_keys,
                            }))
                            .collect::<Vec<_>>(),
                        "accept_set": [],
                        "pre_agreed": true,
                    }),
                    now,
                )?;
                // The core ontology is pre-agreed: its accept set is empty
                // and stabilization is institutional.
                let next_state =
                    transition(interaction.state(), MessageType::Accept, Role::Coordinator)
                        .map_err(crate::protocol::ProtocolError::from)?;
                interaction.context.state = next_state;
                interaction.context.plan = Some(plan.clone());
                interaction.solid_operation = Some(invocation.operation.clone());
                self.audit.append(
                    &id,
                    AuditEvent::Stabilized,
                    json!({
                        "plan_id": plan.plan_id,
                        "accepts": [],
                        "pre_agreed": true,
                    }),
                    now,
                )?;
                let notice = self.build_signed_envelope(
                    &id,
                    Payload::Accept(AcceptPayload {
                        plan_id: plan.plan_id,
                    }),
                )?;
                effects.outbound.push(Outbound {
                    to: interaction.context.initiator.clone(),
                    envelope: notice,
                });
                Ok(())
            }
            Err(
                NegotiationError::NoMapping { .. }
                | NegotiationError::SchemaViolation { .. }
                | NegotiationError::RuleViolation(_),
            ) => {
                let report =
                    self.dissolve_interaction(interaction, DissolveReason::FallbackExhausted, now)?;
                effects.dissolutions.push(report);
                Ok(())
            }
            Err(e) => Err(e.into()),
        }
    }

    fn renegotiate_interaction(
        &mut self,
        interaction: &mut Interaction,
        kind: FailureKind,
        withdrawn: BTreeSet<String>,
        now: i64,
        effects: &mut Effects,
    ) -> Result<(), CoordinatorError> {
        let id = interaction.context.interaction_id.clone();
        let Some(session) = interaction.session.clone() else {
            let report =
                self.dissolve_interaction(interaction, DissolveReason::FallbackExhausted, now)?;
            effects.dissolutions.push(report);
            return Ok(());
        };

        // Rebuild the candidate-level distribution before removal: after a
        // composition collapse the session distribution is a plan point
        // mass, but renegotiation reasons over capabilities.
        let live = interaction.live_judgments();
        let mut base = session;
        match normalize_judgments(&live) {
            Ok(dist) => base.live_candidates = dist,
            Err(_) => {
                let report = self.dissolve_interaction(
                    interaction,
                    DissolveReason::FallbackExhausted,
                    now,
                )?;
                effects.dissolutions.push(report);
                return Ok(());
            }
        }
        match renegotiate(&base, kind, &withdrawn) {
            Ok(next) => {
                if next.renegotiations > self.config.renegotiation_cap {
                    let report = self.dissolve_interaction(
                        interaction,
                        DissolveReason::FallbackExhausted,
                        now,
                    )?;
                    effects.dissolutions.push(report);
                    return Ok(());
                }
                for cap in &withdrawn {
                    interaction.withdrawn.insert(cap.clone());
                }
                interaction.context.entropy_trace = next.entropy_trace.clone();
                interaction.session = Some(next);
                interaction.context.plan = None;
                interaction.accepts.clear();
                interaction.step_results.clear();
                interaction.live_offers.clear();
                interaction.context.offers.clear();
                interaction.responded.clear();

                // Re-solicit the surviving candidates; their fresh offers
                // re-open negotiation.
                let owners: BTreeSet<String> = interaction
                    .live_judgments()
                    .iter()
                    .filter_map(|j| interaction.capability_owner.get(&j.capability_id).cloned())
                    .collect();
                interaction.solicited = owners.clone();
                let intent = &interaction.context.intent;
                let solicitation = IntentPayload {
                    goal_text: intent.goal_text.clone(),
                    constraints: intent.constraints.clone(),
                    context: intent.context.redacted(),
                    deadline: intent.deadline,
                    priority_order: intent.priority_order.clone(),
                    claims: Vec::new(),
                };
                for owner in owners {
                    let envelope = self.build_envelope(&id, Payload::Intent(solicitation.clone()));
                    effects.outbound.push(Outbound {
                        to: owner,
                        envelope,
                    });
                }
                Ok(())
            }
            Err(NegotiationError::NoSurvivingCandidates) => {
                let report =
                    self.dissolve_interaction(interaction, DissolveReason::FallbackExhausted, now)?;
                effects.dissolutions.push(report);
                Ok(())
            }
            Err(e) => Err(e.into()),
        }
    }

    // ------------------------------------------------------------------
    // Dissolution and residual coupling
    // ------------------------------------------------------------------

    /// Dissolve an interaction: clear plan, offers and session, revoke
    /// grants, apply the terminal transition, and assert zero residual
    /// coupling. Audit records are the sole surviving artifact.
    pub fn dissolve(
        &mut self,
        interaction_id: &str,
        reason: DissolveReason,
    ) -> Result<DissolutionReport, CoordinatorError> {
        let now = self.clock.now_ms();
        let mut interaction = self
            .interactions
            .remove(interaction_id)
            .ok_or_else(|| CoordinatorError::UnknownInteraction(interaction_id.to_string()))?;
        let result = self.dissolve_interaction(&mut interaction, reason, now);
        self.interactions
            .insert(interaction_id.to_string(), interaction);
        result
    }

    fn dissolve_interaction(
        &mut self,
        interaction: &mut Interaction,
        reason: DissolveReason,
        now: i64,
    ) -> Result<DissolutionReport, CoordinatorError> {
        let id = interaction.context.interaction_id.clone();
        if interaction.state() == InteractionState::Dissolved {
            return Ok(DissolutionReport {
                interaction_id: id,
                reason,
                artifacts_cleared: ClearedCounts {
                    offers: 0,
                    plans: 0,
                    grants: 0,
                    session: 0,
                },
                residual_coupling: 0,
            });
        }
        let next_state = transition(interaction.state(), MessageType::Dissolve, Role::Coordinator)
            .map_err(crate::protocol::ProtocolError::from)?;

        let cleared = ClearedCounts {
            offers: interaction.context.offers.len(),
            plans: usize::from(interaction.context.plan.is_some()),
            grants: self.grants.revoke_interaction_grants(&id),
            session: usize::from(interaction.session.is_some()),
        };
        interaction.context.plan = None;
        interaction.context.offers.clear();
        interaction.context.grants.clear();
        interaction.context.entropy_trace.clear();
        interaction.session = None;
        interaction.live_offers.clear();
        interaction.accepts.clear();
        interaction.step_results.clear();
        interaction.context.state = next_state;
        interaction.context.t_ack = Some(interaction.context.t_ack.unwrap_or(now));

        let residual = self.residual_of_interaction(interaction);
        debug_assert_eq!(residual, 0, "dissolution left residual coupling");
        let live_after = self.grants.live_grants_for_interaction(&id);
        self.audit.append(
            &id,
            AuditEvent::Dissolved,
            json!({
                "reason": reason,
                "artifacts_cleared": cleared,
                "grants_revoked": cleared.grants,
                "residual_coupling": residual,
                "live_grants_after": live_after,
            }),
            now,
        )?;
        Ok(DissolutionReport {
            interaction_id: id,
            reason,
            artifacts_cleared: cleared,
            residual_coupling: residual,
        })
    }

    fn residual_of_interaction(&self, interaction: &Interaction) -> u64 {
        if interaction.state() != InteractionState::Dissolved {
            return 1;
        }
        let live = self
            .grants
            .live_grants_for_interaction(&interaction.context.interaction_id);
        u64::from(interaction.context.plan.is_some())
            + interaction.context.offers.len() as u64
            + live as u64
            + u64::from(interaction.session.is_some())
    }

    /// Count live shared coordination artifacts between two agents:
    /// non-dissolved interactions involving both, unrevoked grants tied to
    /// those interactions, and retained plans referencing both. Audit
    /// records and outcome priors are excluded (the learning exemption).
    pub fn residual_coupling(&self, a: &str, b: &str) -> u64 {
        let mut count = 0u64;
        for interaction in self.interactions.values() {
            if interaction.state() == InteractionState::Dissolved {
                continue;
            }
            let mut members = interaction.context.participants.clone();
            members.insert(interaction.context.initiator.clone());
            if !(members.contains(a) && members.contains(b)) {
                continue;
            }
            count += 1;
            count += self
                .grants
                .live_grants_for(a, &interaction.context.interaction_id) as u64;
            count += self
                .grants
                .live_grants_for(b, &interaction.context.interaction_id) as u64;
            if let Some(plan) = &interaction.context.plan {
                let mut plan_members = plan.step_owners();
                plan_members.insert(interaction.context.initiator.clone());
                if plan_members.contains(a) && plan_members.contains(b) {
                    count += 1;
                }
            }
        }
        count
    }

    /// Dissolve every non-dissolved interaction whose deadline has passed.
    pub fn sweep_deadlines(&mut self, now: i64) -> Vec<DissolutionReport> {
        let expired: Vec<String> = self
            .interactions
            .iter()
            .filter(|(_, i)| {
                i.state() != InteractionState::Dissolved
                    && i.context.intent.deadline.map(|d| d < now).unwrap_or(false)
            })
            .map(|(id, _)| id.clone())
            .collect();
        let mut reports = Vec::new();
        for id in expired {
            if let Ok(report) = self.dissolve(&id, DissolveReason::Deadline) {
                reports.push(report);
            }
        }
        reports
    }

    // ------------------------------------------------------------------
    // Outbound envelope construction
    // ------------------------------------------------------------------

    fn next_message_id(&mut self) -> String {
        self.msg_seq += 1;
        format!("m-c{}", self.msg_seq)
    }

    fn build_envelope(&mut self, interaction_id: &str, payload: Payload) -> Envelope {
        let message_id = self.next_message_id();
        Envelope::new(
            message_id,
            interaction_id,
            self.coordinator_id(),
            payload,
            self.clock.now_ms(),
        )
    }

    fn build_signed_envelope(
        &mut self,
        interaction_id: &str,
        payload: Payload,
    ) -> Result<Envelope, CoordinatorError> {
        let envelope = self.build_envelope(interaction_id, payload);
        Ok(sign_envelope(&envelope, &self.keypair)?)
    }
}

fn load_ontology(path: &std::path::Path) -> Result<CoreOntology, CoordinatorError> {
    let data = std::fs::read_to_string(path)
        .map_err(|e| CoordinatorError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&data).map_err(|e| CoordinatorError::Config(format!("{}: {e}", path.display())))
}

impl Coordinator {
    /// Parse and load a core ontology from a TOML document.
    pub fn load_ontology_file(path: &std::path::Path) -> Result<CoreOntology, CoordinatorError> {
        load_ontology(path)
    }
}
