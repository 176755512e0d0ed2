//! Envelope signing and verification.
//!
//! Signatures are detached Ed25519 signatures over the canonical signing
//! bytes (the envelope minus its signature field). Ed25519 signing is
//! deterministic, so equal envelopes always produce equal signatures.

use super::identity::{AgentIdentity, Keypair};
use super::SecurityError;
use crate::protocol::{canonical_signing_bytes, Envelope};

/// Attach a detached signature over the envelope's canonical signing bytes.
pub fn sign_envelope(envelope: &Envelope, keypair: &Keypair) -> Result<Envelope, SecurityError> {
    let bytes = canonical_signing_bytes(envelope)?;
    let mut signed = envelope.clone();
    signed.signature = Some(keypair.sign_hex(&bytes));
    Ok(signed)
}

/// Verify an envelope against the claimed sender identity.
///
/// Binding messages (accept, execute, complete) must be signed; for other
/// types a signature is verified when present. The envelope sender must
/// equal the identity's fingerprint.
pub fn verify_envelope(envelope: &Envelope, identity: &AgentIdentity) -> Result<(), SecurityError> {
    if envelope.sender != identity.agent_id {
        return Err(SecurityError::SenderMismatch {
            envelope_sender: envelope.sender.clone(),
            identity: identity.agent_id.clone(),
        });
    }
    match &envelope.signature {
        None => {
            if envelope.message_type().requires_signature() {
                return Err(SecurityError::MissingRequiredSignature(
                    envelope.message_type(),
                ));
            }
            Ok(())
        }
        Some(signature_hex) => {
            let bytes = canonical_signing_bytes(envelope)?;
            identity.verify(&bytes, signature_hex)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{AcceptPayload, Envelope, IntentPayload, Payload, RejectPayload};
    use crate::semantics::ContextState;
    use std::collections::BTreeMap;

    fn identity_of(kp: &Keypair) -> AgentIdentity {
        AgentIdentity {
            agent_id: kp.fingerprint(),
            public_key: kp.public_key_hex(),
            enrolled_at: 0,
            metadata: BTreeMap::new(),
        }
    }

    fn accept_envelope(kp: &Keypair) -> Envelope {
        Envelope::new(
            "m-1",
            "i-1",
            kp.fingerprint(),
            Payload::Accept(AcceptPayload {
                plan_id: "p-1".to_string(),
            }),
            42,
        )
    }

    #[test]
    fn sign_then_verify() {
        let kp = Keypair::from_seed([5u8; 32]);
        let signed = sign_envelope(&accept_envelope(&kp), &kp).unwrap();
        verify_envelope(&signed, &identity_of(&kp)).unwrap();
    }

    #[test]
    fn tampering_breaks_verification() {
        let kp = Keypair::from_seed([5u8; 32]);
        let mut signed = sign_envelope(&accept_envelope(&kp), &kp).unwrap();
        signed.payload = Payload::Accept(AcceptPayload {
            plan_id: "p-2".to_string(),
        });
        assert!(matches!(
            verify_envelope(&signed, &identity_of(&kp)),
            Err(SecurityError::BadSignature)
        ));
    }

    #[test]
    fn signatures_are_deterministic() {
        let kp = Keypair::from_seed([6u8; 32]);
        let a = sign_envelope(&accept_envelope(&kp), &kp).unwrap();
        let b = sign_envelope(&accept_envelope(&kp), &kp).unwrap();
        assert_eq!(a.signature, b.signature);
    }

    #[test]
    fn unsigned_accept_is_rejected_but_unsigned_intent_is_fine() {
        let kp = Keypair::from_seed([7u8; 32]);
        let identity = identity_of(&kp);
        assert!(matches!(
            verify_envelope(&accept_envelope(&kp), &identity),
            Err(SecurityError::MissingRequiredSignature(_))
        ));

        let intent = Envelope::new(
            "m-2",
            "i-1",
            kp.fingerprint(),
            Payload::Intent(IntentPayload {
                goal_text: "do something".to_string(),
                constraints: vec![],
                context: ContextState::default(),
                deadline: None,
                priority_order: vec![],
                claims: vec![],
            }),
            43,
        );
        verify_envelope(&intent, &identity).unwrap();

        let reject = Envelope::new(
            "m-3",
            "i-1",
            kp.fingerprint(),
            Payload::Reject(RejectPayload {
                capability_id: None,
                plan_id: None,
                failure: None,
                note: None,
                in_reply_to: None,
            }),
            44,
        );
        verify_envelope(&reject, &identity).unwrap();
    }

    #[test]
    fn forged_sender_is_a_mismatch() {
        let kp = Keypair::from_seed([8u8; 32]);
        let other = Keypair::from_seed([9u8; 32]);
        let mut envelope = accept_envelope(&kp);
        envelope.sender = other.fingerprint();
        let envelope = sign_envelope(&envelope, &kp).unwrap();
        assert!(matches!(
            verify_envelope(&envelope, &identity_of(&kp)),
            Err(SecurityError::SenderMismatch { .. })
        ));
    }
}
