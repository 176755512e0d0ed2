//! Wire format, the seven performative payloads, canonical serialization
//! for signing, and the interaction lifecycle state machine.

pub mod canonical;
mod context;
mod envelope;
pub mod framing;
mod message;
mod state;

pub use context::InteractionContext;
pub use envelope::{
    canonical_signing_bytes, decode_envelope, encode_envelope, Envelope, PROTOCOL_VERSION,
};
pub use message::{
    AcceptPayload, Comparator, CompletePayload, Constraint, DissolvePayload, DissolveReason,
    ExecutePayload, FailureKind, IntentPayload, MessageType, OfferPayload, Payload, RejectPayload,
};
pub use state::{transition, IllegalTransition, InteractionState, Role};

/// Errors raised while encoding, decoding, or transitioning protocol state.
#[derive(Debug, Clone, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("unknown message type {0:?}")]
    UnknownMessageType(String),
    #[error("payload does not match message type {message_type}: {detail}")]
    PayloadMismatch {
        message_type: MessageType,
        detail: String,
    },
    #[error("unsupported protocol version {0:?}")]
    UnsupportedVersion(String),
    #[error("unencodable payload: {0}")]
    Unencodable(String),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error(transparent)]
    IllegalTransition(#[from] IllegalTransition),
    #[error("frame of {0} bytes exceeds the frame limit")]
    FrameTooLarge(usize),
    #[error("truncated frame: {0}")]
    TruncatedFrame(String),
    #[error("i/o: {0}")]
    Io(String),
}
