//! Message delivery substrates.
//!
//! Two transports carry the same traffic: an in-process loopback and
//! framed TCP sockets. Below the protocol layer, a connection first runs
//! an identity handshake (enrollment, challenge–response, capability
//! registration) as control documents on the same length-prefixed
//! framing; envelopes flow once a session token is held. Delivery is
//! reliable and in-order per connection.
//!
//! The socket service counts outbound frames per agent, which lets the
//! deterministic runner wait for exact quiescence instead of timing out.

use std::collections::BTreeMap;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::coordinator::Coordinator;
use crate::protocol::framing::{read_frame, write_frame};
use crate::protocol::{decode_envelope, encode_envelope, Envelope};
use crate::security::Keypair;
use crate::semantics::Capability;

/// Identity-layer control documents, distinguished from envelopes by the
/// `auth` tag.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "auth", rename_all = "snake_case")]
pub enum AuthRequest {
    Enroll {
        public_key: String,
        #[serde(default)]
        metadata: BTreeMap<String, String>,
    },
    Challenge {
        agent_id: String,
    },
    Respond {
        challenge_id: String,
        signature: String,
    },
    Register {
        token: String,
        capability: Capability,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "auth", rename_all = "snake_case")]
pub enum AuthResponse {
    Enrolled {
        agent_id: String,
    },
    Challenge {
        challenge_id: String,
        nonce: String,
    },
    Token {
        token: String,
        expires_at: i64,
    },
    Registered {
        capability_id: String,
    },
    Error {
        reason: String,
    },
}

pub fn handle_auth_request(coordinator: &mut Coordinator, request: AuthRequest) -> AuthResponse {
    match request {
        AuthRequest::Enroll {
            public_key,
            metadata,
        } => match hex::decode(&public_key) {
            Ok(bytes) => match coordinator.enroll_agent(&bytes, metadata) {
                Ok(identity) => AuthResponse::Enrolled {
                    agent_id: identity.agent_id,
                },
                Err(e) => AuthResponse::Error {
                    reason: e.to_string(),
                },
            },
            Err(_) => AuthResponse::Error {
                reason: "public key is not valid hex".to_string(),
            },
        },
        AuthRequest::Challenge { agent_id } => match coordinator.issue_challenge(&agent_id) {
            Ok(challenge) => AuthResponse::Challenge {
                challenge_id: challenge.challenge_id,
                nonce: challenge.nonce,
            },
            Err(e) => AuthResponse::Error {
                reason: e.to_string(),
            },
        },
        AuthRequest::Respond {
            challenge_id,
            signature,
        } => match coordinator.verify_challenge_response(&challenge_id, &signature) {
            Ok(token) => AuthResponse::Token {
                token: token.token,
                expires_at: token.expires_at,
            },
            Err(e) => AuthResponse::Error {
                reason: e.to_string(),
            },
        },
        AuthRequest::Register { token, capability } => {
            match coordinator.register_capability(&token, capability) {
                Ok(capability_id) => AuthResponse::Registered { capability_id },
                Err(e) => AuthResponse::Error {
                    reason: e.to_string(),
                },
            }
        }
    }
}

/// Agent-facing view of the coordinator, independent of transport. The
/// deterministic runner drives everything through this interface so
/// loopback and socket runs take the identical decision path.
pub trait CoordinatorLink {
    fn auth(&mut self, request: AuthRequest) -> Result<AuthResponse, HarnessError>;
    /// Deliver one envelope from an agent to the coordinator.
    fn submit(&mut self, envelope: &Envelope) -> Result<(), HarnessError>;
    /// Collect every coordinator-outbound envelope produced since the
    /// last drain, grouped deterministically: agents in sorted order,
    /// per-agent frames in emission order.
    fn drain(&mut self) -> Result<Vec<(String, Envelope)>, HarnessError>;
    /// Control-plane access to the coordinator (sweeps, results).
    fn with_coordinator(&mut self, f: &mut dyn FnMut(&mut Coordinator));
    /// Transport hook before an agent's connect handshake.
    fn begin_connection(&mut self) -> Result<(), HarnessError> {
        Ok(())
    }
    /// Transport hook after a successful handshake for `agent_id`.
    fn finish_connection(&mut self, _agent_id: &str) -> Result<(), HarnessError> {
        Ok(())
    }
}

/// Run the connect handshake: enroll (idempotent), request a challenge,
/// sign its nonce, and collect the session token.
pub fn connect(
    link: &mut dyn CoordinatorLink,
    keypair: &Keypair,
    metadata: BTreeMap<String, String>,
) -> Result<String, HarnessError> {
    let enrolled = link.auth(AuthRequest::Enroll {
        public_key: keypair.public_key_hex(),
        metadata,
    })?;
    let agent_id = match enrolled {
        AuthResponse::Enrolled { agent_id } => agent_id,
        AuthResponse::Error { reason } => return Err(HarnessError::Auth(reason)),
        other => return Err(HarnessError::Auth(format!("unexpected response {other:?}"))),
    };
    let challenge = link.auth(AuthRequest::Challenge {
        agent_id: agent_id.clone(),
    })?;
    let (challenge_id, nonce) = match challenge {
        AuthResponse::Challenge { challenge_id, nonce } => (challenge_id, nonce),
        AuthResponse::Error { reason } => return Err(HarnessError::Auth(reason)),
        other => return Err(HarnessError::Auth(format!("unexpected response {other:?}"))),
    };
    let nonce_bytes =
        hex::decode(&nonce).map_err(|_| HarnessError::Auth("nonce is not hex".to_string()))?;
    let signature = keypair.sign_hex(&nonce_bytes);
    let token = link.auth(AuthRequest::Respond {
        challenge_id,
        signature,
    })?;
    match token {
        AuthResponse::Token { token, .. } => Ok(token),
        AuthResponse::Error { reason } => Err(HarnessError::Auth(reason)),
        other => Err(HarnessError::Auth(format!("unexpected response {other:?}"))),
    }
}

// ----------------------------------------------------------------------
// Loopback
// ----------------------------------------------------------------------

/// In-process transport: direct calls, queued outbound envelopes.
pub struct LoopbackLink {
    coordinator: Coordinator,
    pending: Vec<(String, Envelope)>,
}

impl LoopbackLink {
    pub fn new(coordinator: Coordinator) -> Self {
        LoopbackLink {
            coordinator,
            pending: Vec::new(),
        }
    }

    pub fn coordinator_mut(&mut self) -> &mut Coordinator {
        &mut self.coordinator
    }
}

impl CoordinatorLink for LoopbackLink {
    fn auth(&mut self, request: AuthRequest) -> Result<AuthResponse, HarnessError> {
        Ok(handle_auth_request(&mut self.coordinator, request))
    }

    fn submit(&mut self, envelope: &Envelope) -> Result<(), HarnessError> {
        // Round-trip through the wire format so loopback exercises the
        // same encode/decode path as sockets.
        let bytes = encode_envelope(envelope)?;
        let decoded = decode_envelope(&bytes)?;
        let effects = self.coordinator.submit(decoded);
        for outbound in effects.outbound {
            self.pending.push((outbound.to, outbound.envelope));
        }
        Ok(())
    }

    fn drain(&mut self) -> Result<Vec<(String, Envelope)>, HarnessError> {
        let mut drained = std::mem::take(&mut self.pending);
        drained.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(drained)
    }

    fn with_coordinator(&mut self, f: &mut dyn FnMut(&mut Coordinator)) {
        f(&mut self.coordinator);
    }
}

// ----------------------------------------------------------------------
// Socket service
// ----------------------------------------------------------------------

struct Connection {
    stream: Mutex<TcpStream>,
}

struct ServiceState {
    coordinator: Mutex<Coordinator>,
    /// agent id → connection able to receive frames for it.
    routes: Mutex<BTreeMap<String, Arc<Connection>>>,
    /// Total envelope frames written per agent since boot.
    sent_counts: Mutex<BTreeMap<String, u64>>,
    /// Total inbound frames fully processed since boot.
    processed_inbound: AtomicU64,
    /// Frames currently being processed by reader threads.
    in_flight: AtomicU64,
    shutdown: AtomicBool,
}

/// Framed-TCP coordinator service; one reader thread per connection,
/// processing serialized through the coordinator lock.
pub struct SocketService {
    state: Arc<ServiceState>,
    local_addr: SocketAddr,
    accept_handle: Option<JoinHandle<()>>,
}

impl SocketService {
    pub fn bind(coordinator: Coordinator, addr: &str) -> Result<Self, HarnessError> {
        let listener =
            TcpListener::bind(addr).map_err(|e| HarnessError::Io(format!("bind {addr}: {e}")))?;
        let local_addr = listener
            .local_addr()
            .map_err(|e| HarnessError::Io(e.to_string()))?;
        let state = Arc::new(ServiceState {
            coordinator: Mutex::new(coordinator),
            routes: Mutex::new(BTreeMap::new()),
            sent_counts: Mutex::new(BTreeMap::new()),
            processed_inbound: AtomicU64::new(0),
            in_flight: AtomicU64::new(0),
            shutdown: AtomicBool::new(false),
        });
        let accept_state = Arc::clone(&state);
        let accept_handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if accept_state.shutdown.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let conn_state = Arc::clone(&accept_state);
                std::thread::spawn(move || serve_connection(conn_state, stream));
            }
        });
        Ok(SocketService {
            state,
            local_addr,
            accept_handle: Some(accept_handle),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn with_coordinator<R>(&self, f: impl FnOnce(&mut Coordinator) -> R) -> R {
        let mut guard = self.state.coordinator.lock().expect("coordinator lock");
        f(&mut guard)
    }

    /// Per-agent sent-frame counts once every inbound frame the runner
    /// has written was fully processed. Counter-based, so quiescence is
    /// exact rather than timeout-guessed.
    fn quiescent_counts(&self, inbound_sent: u64) -> BTreeMap<String, u64> {
        loop {
            let processed = self.state.processed_inbound.load(Ordering::SeqCst);
            let in_flight = self.state.in_flight.load(Ordering::SeqCst);
            if processed >= inbound_sent && in_flight == 0 {
                return self.state.sent_counts.lock().expect("counts lock").clone();
            }
            std::thread::yield_now();
        }
    }

    pub fn shutdown(&mut self) {
        self.state.shutdown.store(true, Ordering::SeqCst);
        // Unblock the accept loop.
        let _ = TcpStream::connect(self.local_addr);
        if let Some(handle) = self.accept_handle.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for SocketService {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn serve_connection(state: Arc<ServiceState>, stream: TcpStream) {
    let write_half = match stream.try_clone() {
        Ok(s) => Arc::new(Connection {
            stream: Mutex::new(s),
        }),
        Err(_) => return,
    };
    let mut read_half = stream;
    loop {
        if state.shutdown.load(Ordering::SeqCst) {
            return;
        }
        let frame = match read_frame(&mut read_half) {
            Ok(Some(frame)) => frame,
            // Clean EOF or a truncated/oversized frame: reset the connection.
            Ok(None) | Err(_) => return,
        };
        state.in_flight.fetch_add(1, Ordering::SeqCst);
        let outcome = process_frame(&state, &write_half, &frame);
        state.processed_inbound.fetch_add(1, Ordering::SeqCst);
        state.in_flight.fetch_sub(1, Ordering::SeqCst);
        if outcome.is_err() {
            return;
        }
    }
}

fn process_frame(
    state: &Arc<ServiceState>,
    conn: &Arc<Connection>,
    frame: &[u8],
) -> Result<(), HarnessError> {
    let looks_like_auth = serde_json::from_slice::<serde_json::Value>(frame)
        .ok()
        .map(|v| v.get("auth").is_some())
        .unwrap_or(false);
    if looks_like_auth {
        let request: AuthRequest = serde_json::from_slice(frame)
            .map_err(|e| HarnessError::Auth(format!("bad auth document: {e}")))?;
        let response = {
            let mut coordinator = state.coordinator.lock().expect("coordinator lock");
            handle_auth_request(&mut coordinator, request.clone())
        };
        if let AuthResponse::Token { .. } = &response {
            // The authenticated agent now receives frames on this connection.
            if let AuthRequest::Respond { .. } = &request {
                if let Some(agent_id) = token_agent(state, &response) {
                    state
                        .routes
                        .lock()
                        .expect("routes lock")
                        .insert(agent_id, Arc::clone(conn));
                }
            }
        }
        let bytes =
            serde_json::to_vec(&response).map_err(|e| HarnessError::Io(e.to_string()))?;
        let mut stream = conn.stream.lock().expect("stream lock");
        write_frame(&mut *stream, &bytes).map_err(|e| HarnessError::Io(e.to_string()))?;
        return Ok(());
    }

    let envelope = match decode_envelope(frame) {
        Ok(envelope) => envelope,
        Err(e) => {
            // Frame integrity: a malformed envelope resets the connection.
            return Err(HarnessError::Protocol(e));
        }
    };
    let effects = {
        let mut coordinator = state.coordinator.lock().expect("coordinator lock");
        coordinator.submit(envelope)
    };
    let routes = state.routes.lock().expect("routes lock");
    for outbound in effects.outbound {
        let Some(target) = routes.get(&outbound.to) else {
            continue;
        };
        let bytes = encode_envelope(&outbound.envelope)?;
        {
            let mut stream = target.stream.lock().expect("stream lock");
            write_frame(&mut *stream, &bytes).map_err(|e| HarnessError::Io(e.to_string()))?;
        }
        let mut counts = state.sent_counts.lock().expect("counts lock");
        *counts.entry(outbound.to.clone()).or_insert(0) += 1;
    }
    Ok(())
}

fn token_agent(state: &Arc<ServiceState>, response: &AuthResponse) -> Option<String> {
    let AuthResponse::Token { token, .. } = response else {
        return None;
    };
    let coordinator = state.coordinator.lock().expect("coordinator lock");
    let now = coordinator.now();
    coordinator.token_agent(token, now)
}

/// Socket-backed link used by the deterministic runner: one TCP
/// connection per agent, frame-count-based quiescence.
pub struct SocketLink {
    service: SocketService,
    /// agent name order is fixed by the runner; keyed by agent id here.
    connections: BTreeMap<String, TcpStream>,
    received_counts: BTreeMap<String, u64>,
    /// Total frames this link has written to the service.
    sent_frames: u64,
    /// Connection used for auth handshakes before an agent id is known.
    current_auth: Option<TcpStream>,
}

impl SocketLink {
    pub fn new(service: SocketService) -> Self {
        SocketLink {
            service,
            connections: BTreeMap::new(),
            received_counts: BTreeMap::new(),
            sent_frames: 0,
            current_auth: None,
        }
    }

    pub fn service(&self) -> &SocketService {
        &self.service
    }

    /// Open the connection that the next `connect` handshake will use; on
    /// success the connection is registered under the agent's id.
    pub fn open_connection(&mut self) -> Result<(), HarnessError> {
        let stream = TcpStream::connect(self.service.local_addr())
            .map_err(|e| HarnessError::Io(e.to_string()))?;
        stream
            .set_nodelay(true)
            .map_err(|e| HarnessError::Io(e.to_string()))?;
        self.current_auth = Some(stream);
        Ok(())
    }

    pub fn adopt_connection(&mut self, agent_id: &str) -> Result<(), HarnessError> {
        let stream = self
            .current_auth
            .take()
            .ok_or_else(|| HarnessError::Auth("no open connection".to_string()))?;
        self.connections.insert(agent_id.to_string(), stream);
        self.received_counts.insert(agent_id.to_string(), 0);
        Ok(())
    }

    fn auth_stream(&mut self) -> Result<&mut TcpStream, HarnessError> {
        self.current_auth
            .as_mut()
            .ok_or_else(|| HarnessError::Auth("no open connection".to_string()))
    }
}

impl CoordinatorLink for SocketLink {
    fn auth(&mut self, request: AuthRequest) -> Result<AuthResponse, HarnessError> {
        let bytes = serde_json::to_vec(&request).map_err(|e| HarnessError::Io(e.to_string()))?;
        self.sent_frames += 1;
        let stream = self.auth_stream()?;
        write_frame(stream, &bytes).map_err(|e| HarnessError::Io(e.to_string()))?;
        let frame = read_frame(stream)?
            .ok_or_else(|| HarnessError::Io("connection closed during auth".to_string()))?;
        serde_json::from_slice(&frame).map_err(|e| HarnessError::Auth(format!("bad auth reply: {e}")))
    }

    fn submit(&mut self, envelope: &Envelope) -> Result<(), HarnessError> {
        let bytes = encode_envelope(envelope)?;
        self.sent_frames += 1;
        let stream = self
            .connections
            .get_mut(&envelope.sender)
            .ok_or_else(|| HarnessError::Auth(format!("no connection for {}", envelope.sender)))?;
        write_frame(stream, &bytes).map_err(|e| HarnessError::Io(e.to_string()))
    }

    fn drain(&mut self) -> Result<Vec<(String, Envelope)>, HarnessError> {
        let mut collected: Vec<(String, Envelope)> = Vec::new();
        // Outbound counts are final once every frame we wrote has been
        // processed; reader threads write replies before marking done.
        let target = self.service.quiescent_counts(self.sent_frames);
        let agent_ids: Vec<String> = self.connections.keys().cloned().collect();
        for agent_id in agent_ids {
            let expected = target.get(&agent_id).copied().unwrap_or(0);
            let received = self.received_counts.get(&agent_id).copied().unwrap_or(0);
            if received >= expected {
                continue;
            }
            let stream = self.connections.get_mut(&agent_id).expect("known agent");
            for _ in received..expected {
                let frame = read_frame(stream)?.ok_or_else(|| {
                    HarnessError::Io(format!("connection for {agent_id} closed"))
                })?;
                let envelope = decode_envelope(&frame)?;
                collected.push((agent_id.clone(), envelope));
            }
            self.received_counts.insert(agent_id, expected);
        }
        collected.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(collected)
    }

    fn with_coordinator(&mut self, f: &mut dyn FnMut(&mut Coordinator)) {
        self.service.with_coordinator(|c| f(c));
    }

    fn begin_connection(&mut self) -> Result<(), HarnessError> {
        self.open_connection()
    }

    fn finish_connection(&mut self, agent_id: &str) -> Result<(), HarnessError> {
        self.adopt_connection(agent_id)
    }
}
