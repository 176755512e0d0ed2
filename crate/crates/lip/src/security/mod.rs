//! Identity enrollment, challenge–response authentication, message
//! signing, and claim-based intention-scoped authorization.

mod challenge;
mod grant;
mod identity;
mod policy;
mod signature;

pub use challenge::{Challenge, ChallengeAuth, SessionToken, NONCE_LEN};
pub use grant::{AuthorizationGrant, GrantStore};
pub use identity::{fingerprint, AgentIdentity, IdentityStore, Keypair};
pub use policy::{
    scope_pattern_matches, valid_scope, Claim, Effect, Policy, PolicyRule, Predicate, PredicateOp,
    ScopeDecision,
};
pub use signature::{sign_envelope, verify_envelope};

use crate::protocol::MessageType;

#[derive(Debug, Clone, thiserror::Error)]
pub enum SecurityError {
    #[error("malformed key: {0}")]
    MalformedKey(String),
    #[error("fingerprint collision for {agent_id}")]
    FingerprintCollision { agent_id: String },
    #[error("unknown agent {0}")]
    UnknownAgent(String),
    #[error("unknown challenge {0}")]
    UnknownChallenge(String),
    #[error("challenge already consumed (replay)")]
    Replay,
    #[error("challenge expired")]
    Expired,
    #[error("bad signature")]
    BadSignature,
    #[error("missing required signature on {0}")]
    MissingRequiredSignature(MessageType),
    #[error("envelope sender {envelope_sender} does not match identity {identity}")]
    SenderMismatch {
        envelope_sender: String,
        identity: String,
    },
    #[error("invalid or expired session token")]
    InvalidToken,
    #[error("authorization denied: {reasons:?}")]
    AuthorizationDenied { reasons: Vec<(String, String)> },
    #[error("policy load: {0}")]
    PolicyLoad(String),
    #[error(transparent)]
    Protocol(#[from] crate::protocol::ProtocolError),
}
