//! Interaction context: the Liquid Interface itself.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::message::{IntentPayload, OfferPayload};
use super::state::InteractionState;
use crate::negotiation::CompositionPlan;

/// Runtime state of one Liquid Interface: participants, lifecycle state,
/// the intent being negotiated, and the coordination artifacts that must
/// all be cleared at dissolution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InteractionContext {
    pub interaction_id: String,
    pub initiator: String,
    pub participants: BTreeSet<String>,
    pub state: InteractionState,
    pub intent: IntentPayload,
    pub offers: Vec<OfferPayload>,
    pub plan: Option<CompositionPlan>,
    /// Interface window start (UTC ms).
    pub t_start: i64,
    /// Acknowledged end of the window; set at completion or dissolution.
    pub t_ack: Option<i64>,
    /// Semantic entropy observed per negotiation round (nats).
    pub entropy_trace: Vec<f64>,
    /// Grant ids bound to this interaction; revoked and cleared at dissolution.
    pub grants: Vec<String>,
}

impl InteractionContext {
    pub fn new(
        interaction_id: impl Into<String>,
        initiator: impl Into<String>,
        intent: IntentPayload,
        t_start: i64,
    ) -> Self {
        let initiator = initiator.into();
        InteractionContext {
            interaction_id: interaction_id.into(),
            participants: BTreeSet::from([initiator.clone()]),
            initiator,
            state: InteractionState::Proposed,
            intent,
            offers: Vec::new(),
            plan: None,
            t_start,
            t_ack: None,
            entropy_trace: Vec::new(),
            grants: Vec::new(),
        }
    }

    /// True once the mandatory-dissolution invariant holds: terminal state
    /// with every coordination artifact cleared.
    pub fn is_cleanly_dissolved(&self) -> bool {
        self.state == InteractionState::Dissolved
            && self.plan.is_none()
            && self.offers.is_empty()
            && self.grants.is_empty()
    }
}
