//! Interaction lifecycle state machine.
//!
//! The transition table is total over (state, message, role): every cell
//! yields either a successor state or [`IllegalTransition`]. Dissolved is
//! absorbing, and Executing is reachable only from Stabilized.

use serde::{Deserialize, Serialize};

use super::message::MessageType;

/// Lifecycle of a Liquid Interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionState {
    Proposed,
    Negotiating,
    Stabilized,
    Executing,
    Completed,
    Renegotiating,
    Dissolved,
}

impl InteractionState {
    pub const ALL: [InteractionState; 7] = [
        InteractionState::Proposed,
        InteractionState::Negotiating,
        InteractionState::Stabilized,
        InteractionState::Executing,
        InteractionState::Completed,
        InteractionState::Renegotiating,
        InteractionState::Dissolved,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            InteractionState::Proposed => "proposed",
            InteractionState::Negotiating => "negotiating",
            InteractionState::Stabilized => "stabilized",
            InteractionState::Executing => "executing",
            InteractionState::Completed => "completed",
            InteractionState::Renegotiating => "renegotiating",
            InteractionState::Dissolved => "dissolved",
        }
    }
}

impl std::fmt::Display for InteractionState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Who sent the message, relative to the interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Initiator,
    Responder,
    Coordinator,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Initiator, Role::Responder, Role::Coordinator];
}

/// A (state, message) pair with no defined successor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("illegal transition: {message} in state {state}")]
pub struct IllegalTransition {
    pub state: InteractionState,
    pub message: MessageType,
}

/// Successor state for a message observed in `state` from `sender_role`.
///
/// Reject is the refusal performative and doubles as the failure signal:
/// during negotiation a participant's reject only narrows the candidate
/// set, while a reject after stabilization (or a coordinator-detected
/// failure during negotiation) moves the interaction to Renegotiating.
pub fn transition(
    state: InteractionState,
    msg: MessageType,
    sender_role: Role,
) -> Result<InteractionState, IllegalTransition> {
    use InteractionState as S;
    use MessageType as M;
    use Role as R;

    let next = match (state, msg, sender_role) {
        // Intent instantiates a context; it never transitions an existing one.
        (S::Proposed, M::Offer, R::Responder) => S::Negotiating,
        // Pre-agreed (solidified) plans are stabilized by the coordinator
        // even when no offer ever arrived.
        (S::Proposed, M::Accept, R::Coordinator) => S::Stabilized,
        // A solicited candidate may decline before any offer opened
        // negotiation; the candidate set narrows, the state does not move.
        (S::Proposed, M::Reject, R::Responder) => S::Proposed,
        (S::Proposed, M::Dissolve, R::Initiator | R::Coordinator) => S::Dissolved,

        (S::Negotiating, M::Offer, R::Responder) => S::Negotiating,
        (S::Negotiating, M::Accept, R::Responder | R::Coordinator) => S::Stabilized,
        (S::Negotiating, M::Reject, R::Initiator | R::Responder) => S::Negotiating,
        (S::Negotiating, M::Reject, R::Coordinator) => S::Renegotiating,
        (S::Negotiating, M::Dissolve, R::Initiator | R::Coordinator) => S::Dissolved,

        (S::Stabilized, M::Execute, R::Initiator) => S::Executing,
        (S::Stabilized, M::Reject, _) => S::Renegotiating,
        (S::Stabilized, M::Dissolve, R::Initiator | R::Coordinator) => S::Dissolved,

        (S::Executing, M::Complete, R::Responder | R::Coordinator) => S::Completed,
        (S::Executing, M::Reject, _) => S::Renegotiating,
        (S::Executing, M::Dissolve, R::Initiator | R::Coordinator) => S::Dissolved,

        (S::Completed, M::Dissolve, R::Initiator | R::Coordinator) => S::Dissolved,

        (S::Renegotiating, M::Offer, R::Responder) => S::Negotiating,
        (S::Renegotiating, M::Reject, R::Initiator | R::Responder) => S::Renegotiating,
        (S::Renegotiating, M::Dissolve, R::Initiator | R::Coordinator) => S::Dissolved,

        _ => return Err(IllegalTransition { state, message: msg }),
    };
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn happy_path_traverses_full_lifecycle() {
        let mut s = InteractionState::Proposed;
        let steps = [
            (MessageType::Offer, Role::Responder, InteractionState::Negotiating),
            (MessageType::Accept, Role::Responder, InteractionState::Stabilized),
            (MessageType::Execute, Role::Initiator, InteractionState::Executing),
            (MessageType::Complete, Role::Responder, InteractionState::Completed),
            (MessageType::Dissolve, Role::Initiator, InteractionState::Dissolved),
        ];
        for (msg, role, want) in steps {
            s = transition(s, msg, role).unwrap();
            assert_eq!(s, want);
        }
    }

    #[test]
    fn execute_before_stabilization_is_illegal() {
        let err = transition(InteractionState::Proposed, MessageType::Execute, Role::Initiator)
            .unwrap_err();
        assert_eq!(err.state, InteractionState::Proposed);
        assert_eq!(err.message, MessageType::Execute);
    }

    #[test]
    fn dissolved_is_absorbing() {
        for msg in MessageType::ALL {
            for role in Role::ALL {
                assert!(transition(InteractionState::Dissolved, msg, role).is_err());
            }
        }
    }

    #[test]
    fn total_over_all_cells() {
        // Every cell returns without panicking.
        for state in InteractionState::ALL {
            for msg in MessageType::ALL {
                for role in Role::ALL {
                    let _ = transition(state, msg, role);
                }
            }
        }
    }

    #[test]
    fn executing_only_reachable_from_stabilized() {
        for state in InteractionState::ALL {
            for msg in MessageType::ALL {
                for role in Role::ALL {
                    if let Ok(next) = transition(state, msg, role) {
                        if next == InteractionState::Executing {
                            assert_eq!(state, InteractionState::Stabilized);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn failure_signals_move_to_renegotiating() {
        assert_eq!(
            transition(InteractionState::Executing, MessageType::Reject, Role::Responder).unwrap(),
            InteractionState::Renegotiating
        );
        assert_eq!(
            transition(InteractionState::Stabilized, MessageType::Reject, Role::Responder).unwrap(),
            InteractionState::Renegotiating
        );
        assert_eq!(
            transition(InteractionState::Negotiating, MessageType::Reject, Role::Coordinator)
                .unwrap(),
            InteractionState::Renegotiating
        );
        // A participant rejecting one candidate keeps the session negotiating.
        assert_eq!(
            transition(InteractionState::Negotiating, MessageType::Reject, Role::Initiator)
                .unwrap(),
            InteractionState::Negotiating
        );
    }
}
