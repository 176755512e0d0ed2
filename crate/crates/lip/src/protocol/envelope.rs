//! Signed wire envelope and its canonical encodings.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::canonical::{ensure_finite, to_canonical_bytes};
use super::message::{MessageType, Payload};
use super::ProtocolError;

/// Protocol version accepted by this implementation.
pub const PROTOCOL_VERSION: &str = "lip/0.1";

/// A wire message: one of the seven performatives plus routing metadata
/// and an optional detached signature over the canonical signing bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub protocol_version: String,
    pub message_id: String,
    pub interaction_id: String,
    /// Sender agent id: hex fingerprint of its public key.
    pub sender: String,
    pub payload: Payload,
    /// UTC milliseconds.
    pub timestamp: i64,
    /// Hex-encoded detached signature, when present.
    pub signature: Option<String>,
}

/// Flat wire form used for (de)serialization; payload stays untyped here
/// so it can be checked against the message type explicitly.
#[derive(Serialize, Deserialize)]
struct WireEnvelope {
    protocol_version: String,
    message_id: String,
    interaction_id: String,
    sender: String,
    message_type: String,
    payload: Value,
    timestamp: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    signature: Option<String>,
}

impl Envelope {
    pub fn new(
        message_id: impl Into<String>,
        interaction_id: impl Into<String>,
        sender: impl Into<String>,
        payload: Payload,
        timestamp: i64,
    ) -> Self {
        Envelope {
            protocol_version: PROTOCOL_VERSION.to_string(),
            message_id: message_id.into(),
            interaction_id: interaction_id.into(),
            sender: sender.into(),
            payload,
            timestamp,
            signature: None,
        }
    }

    pub fn message_type(&self) -> MessageType {
        self.payload.message_type()
    }

    fn to_wire(&self) -> Result<WireEnvelope, ProtocolError> {
        let payload = self.payload.to_value()?;
        ensure_finite(&payload)?;
        Ok(WireEnvelope {
            protocol_version: self.protocol_version.clone(),
            message_id: self.message_id.clone(),
            interaction_id: self.interaction_id.clone(),
            sender: self.sender.clone(),
            message_type: self.message_type().as_str().to_string(),
            payload,
            timestamp: self.timestamp,
            signature: self.signature.clone(),
        })
    }
}

/// Canonical serialization of an envelope: sorted keys, UTF-8, compact.
/// Deterministic for equal envelopes.
pub fn encode_envelope(envelope: &Envelope) -> Result<Vec<u8>, ProtocolError> {
    to_canonical_bytes(&envelope.to_wire()?)
}

/// Parse raw bytes into an envelope. Returns a structured error on
/// malformed documents, unknown message types, payload/type mismatch, or
/// an unsupported protocol version; never a partially constructed value.
pub fn decode_envelope(raw: &[u8]) -> Result<Envelope, ProtocolError> {
    let value: Value =
        serde_json::from_slice(raw).map_err(|e| ProtocolError::MalformedDocument(e.to_string()))?;
    let type_str = value
        .get("message_type")
        .and_then(Value::as_str)
        .ok_or_else(|| ProtocolError::MalformedDocument("missing message_type".into()))?;
    let message_type = MessageType::parse(type_str)?;
    let wire: WireEnvelope = serde_json::from_value(value)
        .map_err(|e| ProtocolError::MalformedDocument(e.to_string()))?;
    if wire.protocol_version != PROTOCOL_VERSION {
        return Err(ProtocolError::UnsupportedVersion(wire.protocol_version));
    }
    let payload = Payload::from_value(message_type, wire.payload)?;
    Ok(Envelope {
        protocol_version: wire.protocol_version,
        message_id: wire.message_id,
        interaction_id: wire.interaction_id,
        sender: wire.sender,
        payload,
        timestamp: wire.timestamp,
        signature: wire.signature,
    })
}

/// Canonical bytes an envelope signature is computed over: the canonical
/// encoding with the signature field excluded. Stable across
/// re-serialization and signature attachment.
pub fn canonical_signing_bytes(envelope: &Envelope) -> Result<Vec<u8>, ProtocolError> {
    let mut wire = envelope.to_wire()?;
    wire.signature = None;
    to_canonical_bytes(&wire)
}
