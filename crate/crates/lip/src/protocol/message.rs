//! The seven performative message types and their payloads.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ProtocolError;
use crate::semantics::ContextState;

/// Performative role of a message within an interaction. Exactly these
/// seven are accepted on the wire; anything else is rejected at decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageType {
    Intent,
    Offer,
    Accept,
    Reject,
    Execute,
    Complete,
    Dissolve,
}

impl MessageType {
    pub const ALL: [MessageType; 7] = [
        MessageType::Intent,
        MessageType::Offer,
        MessageType::Accept,
        MessageType::Reject,
        MessageType::Execute,
        MessageType::Complete,
        MessageType::Dissolve,
    ];

    pub fn parse(s: &str) -> Result<Self, ProtocolError> {
        match s {
            "intent" => Ok(MessageType::Intent),
            "offer" => Ok(MessageType::Offer),
            "accept" => Ok(MessageType::Accept),
            "reject" => Ok(MessageType::Reject),
            "execute" => Ok(MessageType::Execute),
            "complete" => Ok(MessageType::Complete),
            "dissolve" => Ok(MessageType::Dissolve),
            other => Err(ProtocolError::UnknownMessageType(other.to_string())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            MessageType::Intent => "intent",
            MessageType::Offer => "offer",
            MessageType::Accept => "accept",
            MessageType::Reject => "reject",
            MessageType::Execute => "execute",
            MessageType::Complete => "complete",
            MessageType::Dissolve => "dissolve",
        }
    }

    /// Accept, execute and complete are semantically binding: they commit
    /// an agent to the negotiated terms and must carry a signature.
    pub fn requires_signature(&self) -> bool {
        matches!(
            self,
            MessageType::Accept | MessageType::Execute | MessageType::Complete
        )
    }
}

impl std::fmt::Display for MessageType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Comparator used in intent constraints and policy predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparator {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

/// One structured constraint of an intent: `(key, comparator, value)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constraint {
    pub key: String,
    pub comparator: Comparator,
    pub value: Value,
}

/// Reasons a participant can signal coordination failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    CapabilityUnavailable,
    ConstraintUnsatisfied,
    ScopeInsufficient,
    ExecutionError,
}

/// Why an interaction was dissolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DissolveReason {
    Completed,
    Abandoned,
    FallbackExhausted,
    Deadline,
    PolicyRevocation,
}

/// The articulated objective that instantiates a Liquid Interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentPayload {
    /// Natural-language objective.
    pub goal_text: String,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
    pub context: ContextState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline: Option<i64>,
    /// Constraint keys ordered from highest to lowest priority; recursive
    /// simplification drops from the tail.
    #[serde(default)]
    pub priority_order: Vec<String>,
    /// Authorization scopes the initiator claims for this interaction.
    #[serde(default)]
    pub claims: Vec<String>,
}

impl IntentPayload {
    pub fn constraint_keys(&self) -> BTreeSet<String> {
        self.constraints.iter().map(|c| c.key.clone()).collect()
    }

    pub fn constraint(&self, key: &str) -> Option<&Constraint> {
        self.constraints.iter().find(|c| c.key == key)
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.goal_text.trim().is_empty() {
            return Err(ProtocolError::InvalidPayload("goal_text is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.constraints {
            if !seen.insert(c.key.as_str()) {
                return Err(ProtocolError::InvalidPayload(format!(
                    "duplicate constraint key {:?}",
                    c.key
                )));
            }
        }
        Ok(())
    }
}

/// A capability owner's declared total or partial contribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfferPayload {
    pub capability_id: String,
    /// Constraint keys (or sub-goals) this offer addresses.
    pub coverage: BTreeSet<String>,
    /// True iff coverage is a strict subset of the intent's constraint keys.
    pub partial: bool,
    #[serde(default)]
    pub terms: BTreeMap<String, Value>,
    pub expiry: i64,
}

/// Signed agreement binding the sender to a composed plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptPayload {
    pub plan_id: String,
}

/// Refusal or withdrawal. Without a `failure` kind this rejects a single
/// candidate or plan; with one it is a failure signal that drives
/// renegotiation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RejectPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capability_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_reply_to: Option<String>,
}

/// Authorization to execute a stabilized plan (or one step of it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutePayload {
    pub plan_id: String,
    /// Present when the coordinator dispatches a single step to its owner.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capability_id: Option<String>,
}

/// Termination report for one executed step, independent of success.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletePayload {
    pub plan_id: String,
    pub capability_id: String,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ticks: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Value>,
}

/// Explicit invalidation of the interaction context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DissolvePayload {
    pub reason: DissolveReason,
}

/// Typed payload, exactly one per message type.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Intent(IntentPayload),
    Offer(OfferPayload),
    Accept(AcceptPayload),
    Reject(RejectPayload),
    Execute(ExecutePayload),
    Complete(CompletePayload),
    Dissolve(DissolvePayload),
}

impl Payload {
    pub fn message_type(&self) -> MessageType {
        match self {
            Payload::Intent(_) => MessageType::Intent,
            Payload::Offer(_) => MessageType::Offer,
            Payload::Accept(_) => MessageType::Accept,
            Payload::Reject(_) => MessageType::Reject,
            Payload::Execute(_) => MessageType::Execute,
            Payload::Complete(_) => MessageType::Complete,
            Payload::Dissolve(_) => MessageType::Dissolve,
        }
    }

    pub fn to_value(&self) -> Result<Value, ProtocolError> {
        let value = match self {
            Payload::Intent(p) => serde_json::to_value(p),
            Payload::Offer(p) => serde_json::to_value(p),
            Payload::Accept(p) => serde_json::to_value(p),
            Payload::Reject(p) => serde_json::to_value(p),
            Payload::Execute(p) => serde_json::to_value(p),
            Payload::Complete(p) => serde_json::to_value(p),
            Payload::Dissolve(p) => serde_json::to_value(p),
        };
        value.map_err(|e| ProtocolError::Unencodable(e.to_string()))
    }

    /// Parse a payload document against the schema selected by the message
    /// type. Unknown fields are rejected.
    pub fn from_value(message_type: MessageType, value: Value) -> Result<Self, ProtocolError> {
        let mismatch = |e: serde_json::Error| ProtocolError::PayloadMismatch {
            message_type,
            detail: e.to_string(),
        };
        let payload = match message_type {
            MessageType::Intent => Payload::Intent(serde_json::from_value(value).map_err(mismatch)?),
            MessageType::Offer => Payload::Offer(serde_json::from_value(value).map_err(mismatch)?),
            MessageType::Accept => Payload::Accept(serde_json::from_value(value).map_err(mismatch)?),
            MessageType::Reject => Payload::Reject(serde_json::from_value(value).map_err(mismatch)?),
            MessageType::Execute => {
                Payload::Execute(serde_json::from_value(value).map_err(mismatch)?)
            }
            MessageType::Complete => {
                Payload::Complete(serde_json::from_value(value).map_err(mismatch)?)
            }
            MessageType::Dissolve => {
                Payload::Dissolve(serde_json::from_value(value).map_err(mismatch)?)
            }
        };
        if let Payload::Intent(intent) = &payload {
            intent.validate()?;
        }
        Ok(payload)
    }

    pub fn as_intent(&self) -> Option<&IntentPayload> {
        match self {
            Payload::Intent(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_offer(&self) -> Option<&OfferPayload> {
        match self {
            Payload::Offer(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_accept(&self) -> Option<&AcceptPayload> {
        match self {
            Payload::Accept(p) => Some(p),
            _ => None,
        }
    }
}
