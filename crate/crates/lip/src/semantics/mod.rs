//! Semantic adjudication, suitability/prior blending, semantic entropy,
//! and the outcome-prior store.

mod adjudicator;
mod capability;
mod entropy;
mod prior;

pub use adjudicator::{
    admit, sort_judgments, tokenize, Adjudicator, AdjudicatorConfig, CandidateJudgment,
    CommandAdjudicator, ConstraintMatch, LexicalAdjudicator,
};
pub use capability::{Capability, ContextState};
pub use entropy::{
    blend_score, entropy, normalize_judgments, SuitabilityDistribution, NORMALIZATION_TOLERANCE,
};
pub use prior::{
    latency_score, update_prior, OutcomePrior, OutcomeSignal, PriorStore, INITIAL_RHO,
};

#[derive(Debug, Clone, thiserror::Error)]
pub enum SemanticsError {
    #[error("capability list is empty")]
    NoCapabilities,
    #[error("invalid capability: {0}")]
    InvalidCapability(String),
    #[error("distribution has no entries")]
    EmptyDistribution,
    #[error("invalid probability {value} for {id}")]
    InvalidProbability { id: String, value: f64 },
    #[error("distribution sums to {sum}, not 1")]
    Unnormalized { sum: f64 },
    #[error("all candidate suitabilities are zero")]
    NoViableCandidates,
    #[error("{name} = {value} is out of range")]
    OutOfRange { name: String, value: f64 },
    #[error("adjudicator failure: {0}")]
    Adjudicator(String),
    #[error("prior store: {0}")]
    Store(String),
}
