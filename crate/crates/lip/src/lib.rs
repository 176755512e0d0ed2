//! Liquid Interface Protocol (LIP).
//!
//! A coordination substrate in which interfaces are ephemeral negotiated
//! events: created by intent articulation, stabilized by semantic
//! negotiation under an entropy budget, executed under claim-scoped
//! authorization, and mandatorily dissolved with zero residual coupling.
//!
//! The crate is organized along the protocol's layers:
//!
//! - [`protocol`] — wire format, the seven performatives, canonical
//!   serialization for signing, and the lifecycle state machine.
//! - [`semantics`] — adjudication of capabilities against intents,
//!   suitability/prior blending, and semantic entropy.
//! - [`negotiation`] — clarification rounds under the entropy budget,
//!   composition of partial offers, fallbacks, and renegotiation.
//! - [`security`] — enrollment, challenge–response, envelope signatures,
//!   and claim-based policy with interaction-bound grants.
//! - [`coordinator`] — the semantic service bus: routing, lifecycle
//!   enforcement, the audit log, and dissolution.
//! - [`harness`] — transports (loopback and framed TCP) plus the
//!   deterministic scripted scenario runner.
//!
//! The book under `book/` walks through the same layers with runnable
//! examples; its snippets compile as doctests of this crate.

pub mod coordinator;
pub mod harness;
pub mod negotiation;
pub mod protocol;
pub mod security;
pub mod semantics;

#[cfg(doctest)]
mod book_snippets;
