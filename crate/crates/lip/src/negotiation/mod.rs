//! The negotiation function: clarification rounds under the entropy
//! budget, composition of partial offers, convergence and fallback
//! decisions, and renegotiation after failure signals.

mod compose;
mod fallback;
mod session;

pub use compose::{
    compose, cover_exists, stabilize, CompositionPlan, PlanStep, RecordedOffer,
    StabilizationOutcome, SubIntention,
};
pub use fallback::{
    fallback_simplify, fallback_solidify, validate_invocation, CoreOntology, FallbackMode,
    FieldKind, FieldSpec, MappingRule, OperationSchema, SolidInvocation,
};
pub use session::{
    check_convergence, clarify_round, open_session, renegotiate, ConvergenceDecision,
    NegotiationSession, RoundReport, SessionStatus,
};

use std::collections::BTreeSet;

#[derive(Debug, Clone, thiserror::Error)]
pub enum NegotiationError {
    #[error("tau must lie strictly between 0 and 1, got {0}")]
    InvalidTau(f64),
    #[error("round budget must be at least 1, got {0}")]
    InvalidRoundBudget(u32),
    #[error("session is not open (status {0:?})")]
    SessionNotOpen(SessionStatus),
    #[error("round budget of {n_max} exhausted")]
    RoundBudgetExhausted { n_max: u32 },
    #[error("no cover exists; missing keys: {missing_keys:?}")]
    Unresolvable { missing_keys: BTreeSet<String> },
    #[error("accept from {agent} rejected: {reason}")]
    AcceptRejected { agent: String, reason: String },
    #[error("no surviving candidates; dissolution recommended")]
    NoSurvivingCandidates,
    #[error("intent has no droppable constraint left")]
    NothingToSimplify,
    #[error("no mapping rule matches intent {goal:?}")]
    NoMapping { goal: String },
    #[error("schema violation; fields outside the schema: {fields:?}")]
    SchemaViolation { fields: BTreeSet<String> },
    #[error("validation rule violated: {0}")]
    RuleViolation(String),
    #[error(transparent)]
    Semantics(#[from] crate::semantics::SemanticsError),
    #[error("internal: {0}")]
    Internal(String),
}
