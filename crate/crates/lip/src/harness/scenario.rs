//! Scenario files: declarative multi-agent scripts with expected
//! outcomes. A scenario is fully deterministic given its seed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::HarnessError;
use crate::coordinator::{AuditEvent, AuditRecord, CoordinatorConfig};
use crate::negotiation::CoreOntology;
use crate::protocol::{Comparator, FailureKind, InteractionState};
use crate::security::Policy;
use crate::semantics::Capability;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilitySpec {
    pub capability_id: String,
    pub description: String,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    #[serde(default)]
    pub declared_scopes: BTreeSet<String>,
    #[serde(default)]
    pub constraint_domain: BTreeSet<String>,
}

impl CapabilitySpec {
    pub fn into_capability(self, owner: &str) -> Capability {
        Capability {
            capability_id: self.capability_id,
            owner: owner.to_string(),
            description: self.description,
            tags: self.tags,
            declared_scopes: self.declared_scopes,
            constraint_domain: self.constraint_domain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExecuteResult {
    #[default]
    Succeed,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecuteBehavior {
    pub result: ExecuteResult,
    pub latency_ticks: u64,
    pub failure_kind: Option<FailureKind>,
}

impl Default for ExecuteBehavior {
    fn default() -> Self {
        ExecuteBehavior {
            result: ExecuteResult::Succeed,
            latency_ticks: 1,
            failure_kind: None,
        }
    }
}

/// How one capability responds to a solicitation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct OfferTemplate {
    /// Constraint keys to offer; defaults to the capability's constraint
    /// domain intersected with the intent's keys.
    pub coverage: Option<BTreeSet<String>>,
    pub decline: bool,
    pub terms: BTreeMap<String, Value>,
    pub expiry_ticks: Option<i64>,
}

/// Declarative behavior rules: on-intent → offer template, on plan
/// proposal → sign or decline, on execute → succeed or fail with a fixed
/// latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorSpec {
    pub offers: BTreeMap<String, OfferTemplate>,
    pub accept_plans: bool,
    pub on_execute: ExecuteBehavior,
    pub respond_delay_ticks: i64,
}

impl Default for BehaviorSpec {
    fn default() -> Self {
        BehaviorSpec {
            offers: BTreeMap::new(),
            accept_plans: true,
            on_execute: ExecuteBehavior::default(),
            respond_delay_ticks: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: String,
    #[serde(default)]
    pub capabilities: Vec<CapabilitySpec>,
    #[serde(default)]
    pub behavior: BehaviorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub key: String,
    #[serde(default = "default_comparator")]
    pub comparator: Comparator,
    pub value: Value,
}

fn default_comparator() -> Comparator {
    Comparator::Eq
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentSpec {
    /// Virtual tick at which the intent is articulated.
    pub at: i64,
    pub initiator: String,
    pub goal_text: String,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
    #[serde(default)]
    pub context: BTreeMap<String, Value>,
    #[serde(default)]
    pub deadline: Option<i64>,
    #[serde(default)]
    pub priority_order: Vec<String>,
    #[serde(default)]
    pub claims: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub at: i64,
    pub kind: FailureKind,
    /// Target capability id.
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExpectedInteraction {
    pub final_state: Option<InteractionState>,
    pub dissolve_reason: Option<String>,
    pub plan_steps: Option<usize>,
    /// "none", "recursive_simplification", or "solidification".
    pub fallback: Option<String>,
    pub min_rounds: Option<usize>,
    pub failure_signals: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Expected {
    /// Index-aligned with the scenario's intents.
    pub interactions: Vec<ExpectedInteraction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub coordinator: CoordinatorConfig,
    #[serde(default)]
    pub policy: Policy,
    #[serde(default)]
    pub ontology: CoreOntology,
    pub agents: Vec<AgentSpec>,
    pub intents: Vec<IntentSpec>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub expected: Expected,
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        let scenario: Scenario =
            toml::from_str(s).map_err(|e| HarnessError::Scenario(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let data = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Scenario(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&data)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let names: BTreeSet<&str> = self.agents.iter().map(|a| a.name.as_str()).collect();
        if names.len() != self.agents.len() {
            return Err(HarnessError::Scenario("duplicate agent names".into()));
        }
        for intent in &self.intents {
            if !names.contains(intent.initiator.as_str()) {
                return Err(HarnessError::Scenario(format!(
                    "intent initiator {:?} is not an agent",
                    intent.initiator
                )));
            }
        }
        let caps: BTreeSet<&str> = self
            .agents
            .iter()
            .flat_map(|a| a.capabilities.iter().map(|c| c.capability_id.as_str()))
            .collect();
        for fault in &self.faults {
            if !caps.contains(fault.target.as_str()) {
                return Err(HarnessError::Scenario(format!(
                    "fault target {:?} is not a scenario capability",
                    fault.target
                )));
            }
        }
        Ok(())
    }

    /// Deterministic interaction id for the n-th intent.
    pub fn interaction_id(index: usize) -> String {
        format!("i-{index:02}")
    }
}

/// Per-interaction digest of a finished run, reconstructed from audit.
#[derive(Debug, Clone, Serialize)]
pub struct InteractionSummary {
    pub interaction_id: String,
    pub final_state: InteractionState,
    pub rounds: usize,
    pub entropy_trace: Vec<f64>,
    pub fallback_modes: Vec<String>,
    pub plan_steps: Option<usize>,
    pub dissolve_reason: Option<String>,
    pub failure_signals: usize,
}

#[derive(Debug, Serialize)]
pub struct ScenarioResult {
    pub name: String,
    pub seed: u64,
    pub interactions: Vec<InteractionSummary>,
    /// Residual-coupling matrix over `agent_ids`; all zeros after a
    /// completed run.
    pub agent_ids: Vec<String>,
    pub residual_matrix: Vec<Vec<u64>>,
    #[serde(skip)]
    pub audit_records: Vec<AuditRecord>,
    pub audit_path: Option<PathBuf>,
    /// Expectation failures; empty means the expected block held.
    pub failures: Vec<String>,
    pub wall_time_ms: u128,
}

impl ScenarioResult {
    pub fn residual_is_zero(&self) -> bool {
        self.residual_matrix.iter().flatten().all(|v| *v == 0)
    }
}

/// Build per-interaction summaries from the audit trail plus final states.
pub fn summarize(
    records: &[AuditRecord],
    final_states: &BTreeMap<String, InteractionState>,
) -> Vec<InteractionSummary> {
    let mut ids: Vec<String> = Vec::new();
    for r in records {
        if r.event == AuditEvent::IntentReceived && !ids.contains(&r.interaction_id) {
            ids.push(r.interaction_id.clone());
        }
    }
    ids.iter()
        .map(|id| {
            let mine: Vec<&AuditRecord> =
                records.iter().filter(|r| r.interaction_id == *id).collect();
            let rounds = mine
                .iter()
                .filter(|r| matches!(r.event, AuditEvent::RoundCompleted | AuditEvent::NonProgress))
                .count();
            let entropy_trace = mine
                .iter()
                .filter(|r| matches!(r.event, AuditEvent::RoundCompleted | AuditEvent::NonProgress))
                .filter_map(|r| r.detail.get("entropy").and_then(Value::as_f64))
                .collect();
            let fallback_modes = mine
                .iter()
                .filter(|r| r.event == AuditEvent::FallbackTriggered)
                .filter_map(|r| r.detail.get("mode").and_then(Value::as_str))
                .map(str::to_string)
                .collect();
            let plan_steps = mine
                .iter()
                .filter(|r| r.event == AuditEvent::PlanComposed)
                .filter_map(|r| r.detail.get("steps").and_then(Value::as_array))
                .next_back()
                .map(|steps| steps.len());
            let dissolve_reason = mine
                .iter()
                .filter(|r| r.event == AuditEvent::Dissolved)
                .filter_map(|r| r.detail.get("reason").and_then(Value::as_str))
                .map(str::to_string)
                .next_back();
            let failure_signals = mine
                .iter()
                .filter(|r| r.event == AuditEvent::FailureSignal)
                .count();
            InteractionSummary {
                interaction_id: id.clone(),
                final_state: final_states
                    .get(id)
                    .copied()
                    .unwrap_or(InteractionState::Proposed),
                rounds,
                entropy_trace,
                fallback_modes,
                plan_steps,
                dissolve_reason,
                failure_signals,
            }
        })
        .collect()
}

/// Compare summaries against the scenario's expected block.
pub fn check_expectations(scenario: &Scenario, summaries: &[InteractionSummary]) -> Vec<String> {
    let mut failures = Vec::new();
    for (index, expected) in scenario.expected.interactions.iter().enumerate() {
        let id = Scenario::interaction_id(index);
        let Some(summary) = summaries.iter().find(|s| s.interaction_id == id) else {
            failures.push(format!("{id}: no interaction recorded"));
            continue;
        };
        if let Some(want) = expected.final_state {
            if summary.final_state != want {
                failures.push(format!(
                    "{id}: final state {} != expected {}",
                    summary.final_state, want
                ));
            }
        }
        if let Some(want) = &expected.dissolve_reason {
            if summary.dissolve_reason.as_deref() != Some(want.as_str()) {
                failures.push(format!(
                    "{id}: dissolve reason {:?} != expected {:?}",
                    summary.dissolve_reason, want
                ));
            }
        }
        if let Some(want) = expected.plan_steps {
            if summary.plan_steps != Some(want) {
                failures.push(format!(
                    "{id}: plan steps {:?} != expected {}",
                    summary.plan_steps, want
                ));
            }
        }
        if let Some(want) = &expected.fallback {
            let ok = if want == "none" {
                summary.fallback_modes.is_empty()
            } else {
                summary.fallback_modes.iter().any(|m| m == want)
            };
            if !ok {
                failures.push(format!(
                    "{id}: fallback modes {:?} do not match expected {:?}",
                    summary.fallback_modes, want
                ));
            }
        }
        if let Some(want) = expected.min_rounds {
            if summary.rounds < want {
                failures.push(format!(
                    "{id}: rounds {} < expected minimum {}",
                    summary.rounds, want
                ));
            }
        }
        if let Some(want) = expected.failure_signals {
            if summary.failure_signals != want {
                failures.push(format!(
                    "{id}: failure signals {} != expected {}",
                    summary.failure_signals, want
                ));
            }
        }
    }
    failures
}
