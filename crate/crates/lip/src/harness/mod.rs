//! Transports and the deterministic scripted scenario runner.

mod agent;
mod runner;
mod scenario;
mod transport;

pub use agent::{Reaction, ScriptedAgent};
pub use runner::{run_scenario, RunOptions, TransportKind};
pub use scenario::{
    check_expectations, summarize, AgentSpec, BehaviorSpec, CapabilitySpec, ConstraintSpec,
    Expected, ExpectedInteraction, ExecuteBehavior, ExecuteResult, FaultSpec, IntentSpec,
    InteractionSummary, OfferTemplate, Scenario, ScenarioResult,
};
pub use transport::{
    connect, handle_auth_request, AuthRequest, AuthResponse, CoordinatorLink, LoopbackLink,
    SocketLink, SocketService,
};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("authentication: {0}")]
    Auth(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Protocol(#[from] crate::protocol::ProtocolError),
    #[error(transparent)]
    Security(#[from] crate::security::SecurityError),
    #[error(transparent)]
    Coordinator(#[from] crate::coordinator::CoordinatorError),
}
