//! Challenge–response authentication and session tokens.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::identity::IdentityStore;
use super::SecurityError;

/// Nonce length in bytes.
pub const NONCE_LEN: usize = 32;

/// A single-use authentication challenge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Challenge {
    pub challenge_id: String,
    pub agent_id: String,
    /// Hex-encoded random nonce (at least 16 bytes; this implementation
    /// issues 32).
    pub nonce: String,
    pub issued_at: i64,
    pub ttl_ms: i64,
    pub consumed: bool,
}

impl Challenge {
    pub fn expired(&self, now: i64) -> bool {
        now > self.issued_at + self.ttl_ms
    }
}

/// Token returned after a successful challenge response; authorizes
/// subsequent protocol traffic for its agent until expiry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionToken {
    pub token: String,
    pub agent_id: String,
    pub issued_at: i64,
    pub expires_at: i64,
}

/// Issues challenges, verifies responses, and tracks session tokens.
#[derive(Debug, Default)]
pub struct ChallengeAuth {
    challenges: BTreeMap<String, Challenge>,
    tokens: BTreeMap<String, SessionToken>,
    seq: u64,
    pub challenge_ttl_ms: i64,
    pub token_ttl_ms: i64,
}

impl ChallengeAuth {
    pub fn new(challenge_ttl_ms: i64, token_ttl_ms: i64) -> Self {
        ChallengeAuth {
            challenge_ttl_ms,
            token_ttl_ms,
            ..ChallengeAuth::default()
        }
    }

    /// Issue a fresh challenge for an enrolled agent. The nonce comes from
    /// a cryptographic randomness source and is recorded unconsumed.
    pub fn issue_challenge(
        &mut self,
        identities: &IdentityStore,
        agent_id: &str,
        now: i64,
    ) -> Result<Challenge, SecurityError> {
        if !identities.contains(agent_id) {
            return Err(SecurityError::UnknownAgent(agent_id.to_string()));
        }
        use rand::Rng;
        let mut nonce = [0u8; NONCE_LEN];
        rand::rng().fill_bytes(&mut nonce);
        self.seq += 1;
        let challenge = Challenge {
            challenge_id: format!("ch-{}", self.seq),
            agent_id: agent_id.to_string(),
            nonce: hex::encode(nonce),
            issued_at: now,
            ttl_ms: self.challenge_ttl_ms,
            consumed: false,
        };
        self.challenges
            .insert(challenge.challenge_id.clone(), challenge.clone());
        Ok(challenge)
    }

    /// Verify a signature over the challenge nonce. Consumes the challenge
    /// on success and returns a session token bound to the agent.
    pub fn verify_challenge_response(
        &mut self,
        identities: &IdentityStore,
        challenge_id: &str,
        signature_hex: &str,
        now: i64,
    ) -> Result<SessionToken, SecurityError> {
        let challenge = self
            .challenges
            .get(challenge_id)
            .ok_or_else(|| SecurityError::UnknownChallenge(challenge_id.to_string()))?
            .clone();
        if challenge.consumed {
            return Err(SecurityError::Replay);
        }
        if challenge.expired(now) {
            return Err(SecurityError::Expired);
        }
        let identity = identities
            .get(&challenge.agent_id)
            .ok_or_else(|| SecurityError::UnknownAgent(challenge.agent_id.clone()))?;
        let nonce = hex::decode(&challenge.nonce).expect("stored nonce is hex");
        identity.verify(&nonce, signature_hex)?;

        // Single use: flip consumed exactly once.
        self.challenges
            .get_mut(challenge_id)
            .expect("challenge present")
            .consumed = true;

        use rand::Rng;
        let mut token_bytes = [0u8; 16];
        rand::rng().fill_bytes(&mut token_bytes);
        let token = SessionToken {
            token: hex::encode(token_bytes),
            agent_id: challenge.agent_id.clone(),
            issued_at: now,
            expires_at: now + self.token_ttl_ms,
        };
        self.tokens.insert(token.token.clone(), token.clone());
        Ok(token)
    }

    /// Resolve a token to its agent id, enforcing expiry.
    pub fn validate_token(&self, token: &str, now: i64) -> Result<String, SecurityError> {
        let session = self
            .tokens
            .get(token)
            .ok_or(SecurityError::InvalidToken)?;
        if now > session.expires_at {
            return Err(SecurityError::InvalidToken);
        }
        Ok(session.agent_id.clone())
    }

    /// True when the agent holds at least one unexpired token.
    pub fn is_authenticated(&self, agent_id: &str, now: i64) -> bool {
        self.tokens
            .values()
            .any(|t| t.agent_id == agent_id && now <= t.expires_at)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::security::identity::Keypair;

    fn setup() -> (IdentityStore, ChallengeAuth, Keypair) {
        let mut identities = IdentityStore::new();
        let kp = Keypair::from_seed([3u8; 32]);
        identities
            .enroll(&kp.public_key_bytes(), BTreeMap::new(), 0)
            .unwrap();
        (identities, ChallengeAuth::new(1_000, 60_000), kp)
    }

    #[test]
    fn consecutive_challenges_have_distinct_nonces() {
        let (identities, mut auth, kp) = setup();
        let a = auth.issue_challenge(&identities, &kp.fingerprint(), 0).unwrap();
        let b = auth.issue_challenge(&identities, &kp.fingerprint(), 0).unwrap();
        assert_ne!(a.nonce, b.nonce);
    }

    #[test]
    fn unenrolled_agent_cannot_be_challenged() {
        let (identities, mut auth, _) = setup();
        assert!(matches!(
            auth.issue_challenge(&identities, "nobody", 0),
            Err(SecurityError::UnknownAgent(_))
        ));
    }

    #[test]
    fn correct_response_yields_token() {
        let (identities, mut auth, kp) = setup();
        let ch = auth.issue_challenge(&identities, &kp.fingerprint(), 0).unwrap();
        let sig = kp.sign_hex(&hex::decode(&ch.nonce).unwrap());
        let token = auth
            .verify_challenge_response(&identities, &ch.challenge_id, &sig, 10)
            .unwrap();
        assert_eq!(token.agent_id, kp.fingerprint());
        assert_eq!(auth.validate_token(&token.token, 20).unwrap(), kp.fingerprint());
    }

    #[test]
    fn replay_is_rejected() {
        let (identities, mut auth, kp) = setup();
        let ch = auth.issue_challenge(&identities, &kp.fingerprint(), 0).unwrap();
        let sig = kp.sign_hex(&hex::decode(&ch.nonce).unwrap());
        auth.verify_challenge_response(&identities, &ch.challenge_id, &sig, 1)
            .unwrap();
        assert!(matches!(
            auth.verify_challenge_response(&identities, &ch.challenge_id, &sig, 2),
            Err(SecurityError::Replay)
        ));
    }

    #[test]
    fn wrong_key_is_rejected() {
        let (identities, mut auth, kp) = setup();
        let other = Keypair::from_seed([4u8; 32]);
        let ch = auth.issue_challenge(&identities, &kp.fingerprint(), 0).unwrap();
        let sig = other.sign_hex(&hex::decode(&ch.nonce).unwrap());
        assert!(matches!(
            auth.verify_challenge_response(&identities, &ch.challenge_id, &sig, 1),
            Err(SecurityError::BadSignature)
        ));
    }

    #[test]
    fn expired_challenge_is_unverifiable() {
        let (identities, mut auth, kp) = setup();
        let ch = auth.issue_challenge(&identities, &kp.fingerprint(), 0).unwrap();
        let sig = kp.sign_hex(&hex::decode(&ch.nonce).unwrap());
        assert!(matches!(
            auth.verify_challenge_response(&identities, &ch.challenge_id, &sig, 2_000),
            Err(SecurityError::Expired)
        ));
    }

    #[test]
    fn tokens_expire() {
        let (identities, mut auth, kp) = setup();
        let ch = auth.issue_challenge(&identities, &kp.fingerprint(), 0).unwrap();
        let sig = kp.sign_hex(&hex::decode(&ch.nonce).unwrap());
        let token = auth
            .verify_challenge_response(&identities, &ch.challenge_id, &sig, 0)
            .unwrap();
        assert!(auth.validate_token(&token.token, 60_001).is_err());
        assert!(!auth.is_authenticated(&kp.fingerprint(), 60_001));
    }

    #[test]
    fn nonces_are_long_and_unique_over_many_issues() {
        let (identities, mut auth, kp) = setup();
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..1000 {
            let ch = auth.issue_challenge(&identities, &kp.fingerprint(), i).unwrap();
            assert_eq!(hex::decode(&ch.nonce).unwrap().len(), NONCE_LEN);
            assert!(NONCE_LEN >= 16);
            assert!(seen.insert(ch.nonce), "nonce repeated");
        }
    }
}
