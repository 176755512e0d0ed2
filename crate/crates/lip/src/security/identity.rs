//! Cryptographic identities: keypairs, fingerprints, enrollment.

use std::collections::BTreeMap;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SecurityError;

/// Agent id: lowercase hex of the SHA-256 hash of the public key.
pub fn fingerprint(public_key: &[u8]) -> String {
    hex::encode(Sha256::digest(public_key))
}

/// An Ed25519 keypair held by an agent (or the coordinator).
#[derive(Clone)]
pub struct Keypair {
    signing: SigningKey,
}

impl Keypair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        Keypair {
            signing: SigningKey::from_bytes(&seed),
        }
    }

    pub fn from_seed_hex(seed_hex: &str) -> Result<Self, SecurityError> {
        let bytes = hex::decode(seed_hex.trim())
            .map_err(|_| SecurityError::MalformedKey("seed is not valid hex".into()))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| SecurityError::MalformedKey("seed must be 32 bytes".into()))?;
        Ok(Keypair::from_seed(seed))
    }

    pub fn generate() -> Self {
        use rand::Rng;
        let mut seed = [0u8; 32];
        rand::rng().fill_bytes(&mut seed);
        Keypair::from_seed(seed)
    }

    /// Deterministic derivation from a scenario seed and a label, so
    /// scripted harness agents get reproducible identities.
    pub fn derive(seed: u64, label: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_be_bytes());
        hasher.update(label.as_bytes());
        Keypair::from_seed(hasher.finalize().into())
    }

    pub fn seed_hex(&self) -> String {
        hex::encode(self.signing.to_bytes())
    }

    pub fn public_key_bytes(&self) -> [u8; 32] {
        self.signing.verifying_key().to_bytes()
    }

    pub fn public_key_hex(&self) -> String {
        hex::encode(self.public_key_bytes())
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.public_key_bytes())
    }

    /// Detached deterministic signature, hex encoded.
    pub fn sign_hex(&self, message: &[u8]) -> String {
        hex::encode(self.signing.sign(message).to_bytes())
    }
}

impl std::fmt::Debug for Keypair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Keypair")
            .field("fingerprint", &self.fingerprint())
            .finish_non_exhaustive()
    }
}

/// An enrolled agent identity. The agent id is always recomputable from
/// the stored public key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentIdentity {
    pub agent_id: String,
    /// Hex-encoded Ed25519 verification key.
    pub public_key: String,
    pub enrolled_at: i64,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl AgentIdentity {
    pub fn verifying_key(&self) -> Result<VerifyingKey, SecurityError> {
        let bytes = hex::decode(&self.public_key)
            .map_err(|_| SecurityError::MalformedKey("public key is not valid hex".into()))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| SecurityError::MalformedKey("public key must be 32 bytes".into()))?;
        VerifyingKey::from_bytes(&arr)
            .map_err(|e| SecurityError::MalformedKey(format!("invalid verification key: {e}")))
    }

    /// Verify a hex-encoded detached signature over `message`.
    pub fn verify(&self, message: &[u8], signature_hex: &str) -> Result<(), SecurityError> {
        let key = self.verifying_key()?;
        let sig_bytes = hex::decode(signature_hex).map_err(|_| SecurityError::BadSignature)?;
        let sig_arr: [u8; 64] = sig_bytes.try_into().map_err(|_| SecurityError::BadSignature)?;
        let signature = Signature::from_bytes(&sig_arr);
        key.verify(message, &signature)
            .map_err(|_| SecurityError::BadSignature)
    }
}

/// Enrollment registry keyed by fingerprint.
#[derive(Debug, Default)]
pub struct IdentityStore {
    agents: BTreeMap<String, AgentIdentity>,
}

impl IdentityStore {
    pub fn new() -> Self {
        IdentityStore::default()
    }

    /// Enroll a public key. Re-enrolling an identical key is idempotent
    /// and returns the same agent id; a fingerprint collision with
    /// different key bytes is rejected.
    pub fn enroll(
        &mut self,
        public_key: &[u8],
        metadata: BTreeMap<String, String>,
        now: i64,
    ) -> Result<AgentIdentity, SecurityError> {
        let arr: [u8; 32] = public_key
            .try_into()
            .map_err(|_| SecurityError::MalformedKey("public key must be 32 bytes".into()))?;
        VerifyingKey::from_bytes(&arr)
            .map_err(|e| SecurityError::MalformedKey(format!("invalid verification key: {e}")))?;
        let agent_id = fingerprint(public_key);
        let key_hex = hex::encode(public_key);
        if let Some(existing) = self.agents.get(&agent_id) {
            if existing.public_key != key_hex {
                return Err(SecurityError::FingerprintCollision { agent_id });
            }
            return Ok(existing.clone());
        }
        let identity = AgentIdentity {
            agent_id: agent_id.clone(),
            public_key: key_hex,
            enrolled_at: now,
            metadata,
        };
        self.agents.insert(agent_id, identity.clone());
        Ok(identity)
    }

    pub fn get(&self, agent_id: &str) -> Option<&AgentIdentity> {
        self.agents.get(agent_id)
    }

    pub fn contains(&self, agent_id: &str) -> bool {
        self.agents.contains_key(agent_id)
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enrollment_is_idempotent() {
        let mut store = IdentityStore::new();
        let kp = Keypair::from_seed([1u8; 32]);
        let a = store.enroll(&kp.public_key_bytes(), BTreeMap::new(), 1).unwrap();
        let b = store.enroll(&kp.public_key_bytes(), BTreeMap::new(), 2).unwrap();
        assert_eq!(a.agent_id, b.agent_id);
        assert_eq!(a.enrolled_at, b.enrolled_at);
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn malformed_keys_rejected() {
        let mut store = IdentityStore::new();
        assert!(matches!(
            store.enroll(b"short", BTreeMap::new(), 0),
            Err(SecurityError::MalformedKey(_))
        ));
    }

    #[test]
    fn distinct_keys_get_distinct_fingerprints() {
        let a = Keypair::from_seed([1u8; 32]);
        let b = Keypair::from_seed([2u8; 32]);
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn fingerprint_is_recomputable() {
        let kp = Keypair::from_seed([9u8; 32]);
        let mut store = IdentityStore::new();
        let id = store.enroll(&kp.public_key_bytes(), BTreeMap::new(), 0).unwrap();
        let bytes = hex::decode(&id.public_key).unwrap();
        assert_eq!(id.agent_id, fingerprint(&bytes));
        assert_eq!(id.agent_id.len(), 64);
    }
}
