//! Deterministic scenario runner.
//!
//! The runner owns a virtual clock and a discrete event queue. Timed
//! intents and faults are replayed in seed-determined order; every
//! coordinator reaction is drained through the transport and scheduled as
//! scripted agent reactions. Runs with equal seeds produce identical
//! audit sequences on either transport because the runner mediates all
//! delivery and waits for exact quiescence between steps.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::agent::ScriptedAgent;
use super::scenario::{check_expectations, summarize, Scenario, ScenarioResult};
use super::transport::{connect, AuthRequest, AuthResponse, CoordinatorLink, LoopbackLink, SocketLink, SocketService};
use super::HarnessError;
use crate::coordinator::{Coordinator, VirtualClock};
use crate::protocol::{
    Constraint, DissolveReason, Envelope, IntentPayload, InteractionState, Payload,
};
use crate::security::Keypair;
use crate::semantics::ContextState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    Loopback,
    Socket,
}

impl TransportKind {
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        match s {
            "loopback" => Ok(TransportKind::Loopback),
            "socket" => Ok(TransportKind::Socket),
            other => Err(HarnessError::Scenario(format!(
                "unknown transport {other:?} (expected loopback or socket)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub transport: TransportKind,
    pub seed_override: Option<u64>,
    /// Permutes cross-interaction processing order of same-tick events
    /// while preserving each interaction's own order. Used to check that
    /// per-interaction effects are interleaving-independent.
    pub interleave_seed: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            transport: TransportKind::Loopback,
            seed_override: None,
            interleave_seed: None,
        }
    }
}

enum Event {
    Intent(usize),
    Fault(usize),
    Deliver(Envelope),
}

/// Queue key: (tick, affinity rank, insertion seq). The affinity rank is
/// stable per interaction, so permuting it reorders whole interaction
/// streams against each other without reordering any single stream.
type EventKey = (i64, u64, u64);

struct EventQueue {
    events: BTreeMap<EventKey, Event>,
    seq: u64,
    interleave: Option<ChaCha20Rng>,
    affinity_ranks: BTreeMap<String, u64>,
}

impl EventQueue {
    fn new(interleave_seed: Option<u64>) -> Self {
        EventQueue {
            events: BTreeMap::new(),
            seq: 0,
            interleave: interleave_seed.map(ChaCha20Rng::seed_from_u64),
            affinity_ranks: BTreeMap::new(),
        }
    }

    fn rank(&mut self, affinity: &str) -> u64 {
        if let Some(rng) = &mut self.interleave {
            let next = rng.next_u64();
            *self
                .affinity_ranks
                .entry(affinity.to_string())
                .or_insert(next)
        } else {
            0
        }
    }

    fn push(&mut self, at: i64, affinity: &str, event: Event) {
        self.seq += 1;
        let rank = self.rank(affinity);
        self.events.insert((at, rank, self.seq), event);
    }

    fn pop(&mut self) -> Option<(EventKey, Event)> {
        let key = *self.events.keys().next()?;
        let event = self.events.remove(&key)?;
        Some((key, event))
    }
}

pub fn run_scenario(scenario: &Scenario, options: &RunOptions) -> Result<ScenarioResult, HarnessError> {
    let started = Instant::now();
    scenario.validate()?;
    let seed = options.seed_override.unwrap_or(scenario.seed);

    let clock = VirtualClock::starting_at(0);
    let mut config = scenario.coordinator.clone();
    config.bind = None;
    config.coordinator_seed = Some(Keypair::derive(seed, "coordinator").seed_hex());
    let mut coordinator = Coordinator::new(config, Arc::new(clock.clone()))?;
    coordinator.set_policy(scenario.policy.clone());
    coordinator.set_ontology(scenario.ontology.clone());
    let audit_path = coordinator.audit_log().file_for(0);

    let mut link: Box<dyn CoordinatorLink> = match options.transport {
        TransportKind::Loopback => Box::new(LoopbackLink::new(coordinator)),
        TransportKind::Socket => {
            let service = SocketService::bind(coordinator, "127.0.0.1:0")?;
            Box::new(SocketLink::new(service))
        }
    };

    // Enroll, authenticate, and register capabilities for every agent
    // before any intent fires.
    let mut agents: BTreeMap<String, ScriptedAgent> = BTreeMap::new();
    let mut name_by_id: BTreeMap<String, String> = BTreeMap::new();
    for spec in &scenario.agents {
        let mut agent = ScriptedAgent::from_spec(spec, seed);
        link.begin_connection()?;
        let token = connect(link.as_mut(), &agent.keypair, BTreeMap::new())?;
        link.finish_connection(&agent.agent_id)?;
        for capability in agent.capabilities.clone() {
            match link.auth(AuthRequest::Register {
                token: token.clone(),
                capability,
            })? {
                AuthResponse::Registered { .. } => {}
                AuthResponse::Error { reason } => return Err(HarnessError::Auth(reason)),
                other => {
                    return Err(HarnessError::Auth(format!("unexpected response {other:?}")))
                }
            }
        }
        agent.token = Some(token);
        name_by_id.insert(agent.agent_id.clone(), agent.name.clone());
        agents.insert(spec.name.clone(), agent);
    }

    // Timed events in seed-determined order.
    let mut queue = EventQueue::new(options.interleave_seed);
    for (index, intent) in scenario.intents.iter().enumerate() {
        queue.push(intent.at, &Scenario::interaction_id(index), Event::Intent(index));
    }
    for (index, fault) in scenario.faults.iter().enumerate() {
        queue.push(fault.at, &format!("fault-{}", fault.target), Event::Fault(index));
    }

    while let Some(((tick, _, _), event)) = queue.pop() {
        clock.set(tick);
        match event {
            Event::Intent(index) => {
                let spec = &scenario.intents[index];
                let agent = agents
                    .get_mut(&spec.initiator)
                    .expect("validated initiator");
                let payload = IntentPayload {
                    goal_text: spec.goal_text.clone(),
                    constraints: spec
                        .constraints
                        .iter()
                        .map(|c| Constraint {
                            key: c.key.clone(),
                            comparator: c.comparator,
                            value: c.value.clone(),
                        })
                        .collect(),
                    context: ContextState {
                        facts: spec.context.clone(),
                        snapshot_time: tick,
                    },
                    deadline: spec.deadline,
                    priority_order: spec.priority_order.clone(),
                    claims: spec.claims.clone(),
                };
                let envelope = Envelope::new(
                    agent.next_message_id(),
                    Scenario::interaction_id(index),
                    agent.agent_id.clone(),
                    Payload::Intent(payload),
                    tick,
                );
                link.submit(&envelope)?;
                schedule_reactions(link.as_mut(), &mut agents, &name_by_id, &mut queue, tick)?;
            }
            Event::Deliver(envelope) => {
                link.submit(&envelope)?;
                schedule_reactions(link.as_mut(), &mut agents, &name_by_id, &mut queue, tick)?;
            }
            Event::Fault(index) => {
                let fault = &scenario.faults[index];
                let mut engaged: Vec<String> = Vec::new();
                link.with_coordinator(&mut |c| {
                    engaged = c.interactions_engaging(&fault.target);
                });
                let owner = agents
                    .values_mut()
                    .find(|a| a.owns(&fault.target))
                    .expect("validated fault target");
                let reactions = owner.emit_fault(&fault.target, fault.kind, &engaged, tick);
                for reaction in reactions {
                    let affinity = reaction.envelope.interaction_id.clone();
                    queue.push(
                        tick + reaction.delay_ticks,
                        &affinity,
                        Event::Deliver(reaction.envelope),
                    );
                }
            }
        }
    }

    // End of session: sweep deadlines (advancing past the latest one),
    // then force-dissolve any straggler so the run always terminates with
    // mandatory dissolution.
    let max_deadline = scenario
        .intents
        .iter()
        .filter_map(|i| i.deadline)
        .max()
        .unwrap_or(0);
    let mut summaries = Vec::new();
    let mut residual_matrix = Vec::new();
    let mut agent_ids: Vec<String> = agents.values().map(|a| a.agent_id.clone()).collect();
    agent_ids.sort();
    let mut audit_records = Vec::new();
    link.with_coordinator(&mut |c| {
        let sweep_at = (c.now()).max(max_deadline + 1);
        clock.set(sweep_at);
        c.sweep_deadlines(sweep_at);
        for id in c.interaction_ids() {
            if c.interaction_state(&id) != Some(InteractionState::Dissolved) {
                let _ = c.dissolve(&id, DissolveReason::Abandoned);
            }
        }
        audit_records = c.audit_log().records().to_vec();
        let final_states: BTreeMap<String, InteractionState> = c
            .interaction_ids()
            .into_iter()
            .filter_map(|id| c.interaction_state(&id).map(|s| (id, s)))
            .collect();
        summaries = summarize(&audit_records, &final_states);
        residual_matrix = agent_ids
            .iter()
            .map(|a| agent_ids.iter().map(|b| c.residual_coupling(a, b)).collect())
            .collect();
    });

    let failures = check_expectations(scenario, &summaries);
    Ok(ScenarioResult {
        name: scenario.name.clone(),
        seed,
        interactions: summaries,
        agent_ids,
        residual_matrix,
        audit_records,
        audit_path,
        failures,
        wall_time_ms: started.elapsed().as_millis(),
    })
}

/// Drain coordinator output and schedule each scripted reaction.
fn schedule_reactions(
    link: &mut dyn CoordinatorLink,
    agents: &mut BTreeMap<String, ScriptedAgent>,
    name_by_id: &BTreeMap<String, String>,
    queue: &mut EventQueue,
    now: i64,
) -> Result<(), HarnessError> {
    let frames = link.drain()?;
    for (agent_id, envelope) in frames {
        let Some(name) = name_by_id.get(&agent_id) else {
            continue;
        };
        let agent = agents.get_mut(name).expect("agent by name");
        let reactions = agent.react(&envelope, now)?;
        for reaction in reactions {
            let affinity = reaction.envelope.interaction_id.clone();
            queue.push(
                now + reaction.delay_ticks.max(0),
                &affinity,
                Event::Deliver(reaction.envelope),
            );
        }
    }
    Ok(())
}

