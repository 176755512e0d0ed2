//! Negotiation sessions under the entropy budget.
//!
//! A session opens with initial entropy `H0` over the admitted candidate
//! structures and must fall to `H_max = (1 − tau) · H0` within `n_max`
//! clarification rounds. Crossing that boundary triggers the deterministic
//! fallback ladder.

use serde::{Deserialize, Serialize};

use super::NegotiationError;
use crate::protocol::FailureKind;
use crate::semantics::{entropy, SuitabilityDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Converged,
    FallbackTriggered,
    Abandoned,
}

/// Outcome of a convergence check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvergenceDecision {
    Converged,
    Continue,
    TriggerFallback,
}

/// Report for one clarification round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: u32,
    pub entropy: f64,
    /// `H_t − H_{t+1}`; positive values mean reduced uncertainty.
    pub delta: f64,
    /// A round with `ΔH ≤ 0` violates intentional primacy and is surfaced
    /// as an audit event, but it does not terminate the session.
    pub non_progress: bool,
    pub decision: ConvergenceDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegotiationSession {
    pub interaction_id: String,
    /// Initial entropy `H(S)` at `t_start`, in nats.
    pub h0: f64,
    pub tau: f64,
    pub n_max: u32,
    pub round: u32,
    pub entropy_trace: Vec<f64>,
    pub live_candidates: SuitabilityDistribution,
    pub status: SessionStatus,
    /// Completed renegotiation cycles for this interaction.
    pub renegotiations: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_failure: Option<FailureKind>,
}

impl NegotiationSession {
    /// Maximum admissible entropy: `(1 − tau) · H0`. Recomputed on demand
    /// rather than stored so it can never drift from `h0`.
    pub fn h_max(&self) -> f64 {
        (1.0 - self.tau) * self.h0
    }

    pub fn latest_entropy(&self) -> f64 {
        *self.entropy_trace.last().expect("trace always holds H0")
    }
}

/// Open a session over the admitted candidate distribution.
///
/// `H0` is the entropy of `dist`; the session converges immediately only
/// when `H0 = 0` (a point mass needs no clarification).
pub fn open_session(
    interaction_id: impl Into<String>,
    dist: SuitabilityDistribution,
    tau: f64,
    n_max: u32,
) -> Result<NegotiationSession, NegotiationError> {
    if !tau.is_finite() || tau <= 0.0 || tau >= 1.0 {
        return Err(NegotiationError::InvalidTau(tau));
    }
    if n_max < 1 {
        return Err(NegotiationError::InvalidRoundBudget(n_max));
    }
    let h0 = entropy(&dist)?;
    let mut session = NegotiationSession {
        interaction_id: interaction_id.into(),
        h0,
        tau,
        n_max,
        round: 0,
        entropy_trace: vec![h0],
        live_candidates: dist,
        status: SessionStatus::Open,
        renegotiations: 0,
        last_failure: None,
    };
    if h0 <= session.h_max() {
        session.status = SessionStatus::Converged;
    }
    Ok(session)
}

/// Record one clarification round with the revised candidate distribution.
pub fn clarify_round(
    session: &NegotiationSession,
    revised: SuitabilityDistribution,
) -> Result<(NegotiationSession, RoundReport), NegotiationError> {
    if session.status != SessionStatus::Open {
        return Err(NegotiationError::SessionNotOpen(session.status));
    }
    if session.round >= session.n_max {
        return Err(NegotiationError::RoundBudgetExhausted {
            n_max: session.n_max,
        });
    }
    let h = entropy(&revised)?;
    let delta = session.latest_entropy() - h;

    let mut next = session.clone();
    next.round += 1;
    next.entropy_trace.push(h);
    next.live_candidates = revised;

    let decision = check_convergence(&next);
    next.status = match decision {
        ConvergenceDecision::Converged => SessionStatus::Converged,
        ConvergenceDecision::TriggerFallback => SessionStatus::FallbackTriggered,
        ConvergenceDecision::Continue => SessionStatus::Open,
    };
    let report = RoundReport {
        round: next.round,
        entropy: h,
        delta,
        non_progress: delta <= 0.0,
        decision,
    };
    Ok((next, report))
}

/// The boundary-of-liquidity check:
/// converged iff the latest entropy is at or below `H_max` (the boundary
/// is assigned to success); fallback iff the round budget is spent and
/// every post-initial trace entry stayed above `H_max`; continue otherwise.
pub fn check_convergence(session: &NegotiationSession) -> ConvergenceDecision {
    let h_max = session.h_max();
    if session.latest_entropy() <= h_max {
        return ConvergenceDecision::Converged;
    }
    if session.round >= session.n_max
        && session.entropy_trace.iter().skip(1).all(|h| *h > h_max)
    {
        return ConvergenceDecision::TriggerFallback;
    }
    ConvergenceDecision::Continue
}

/// Rebuild the session after a failure signal: withdrawn capabilities are
/// removed, the surviving distribution is renormalized, and the round
/// budget resets with a fresh `H0`. The interaction id is preserved — the
/// context survives renegotiation.
pub fn renegotiate(
    session: &NegotiationSession,
    failure: FailureKind,
    withdrawn: &std::collections::BTreeSet<String>,
) -> Result<NegotiationSession, NegotiationError> {
    let Some(surviving) = session.live_candidates.without(withdrawn) else {
        return Err(NegotiationError::NoSurvivingCandidates);
    };
    let h0 = entropy(&surviving)?;
    let mut next = NegotiationSession {
        interaction_id: session.interaction_id.clone(),
        h0,
        tau: session.tau,
        n_max: session.n_max,
        round: 0,
        entropy_trace: vec![h0],
        live_candidates: surviving,
        status: SessionStatus::Open,
        renegotiations: session.renegotiations + 1,
        last_failure: Some(failure),
    };
    if h0 <= next.h_max() {
        next.status = SessionStatus::Converged;
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn uniform(n: usize) -> SuitabilityDistribution {
        SuitabilityDistribution::uniform((0..n).map(|i| format!("c{i}"))).unwrap()
    }

    #[test]
    fn point_mass_converges_immediately() {
        let s = open_session("i", SuitabilityDistribution::point_mass("only"), 0.5, 5).unwrap();
        assert_eq!(s.h0, 0.0);
        assert_eq!(s.status, SessionStatus::Converged);
    }

    #[test]
    fn uniform_four_budget() {
        let s = open_session("i", uniform(4), 0.5, 5).unwrap();
        assert!((s.h0 - 1.386294).abs() < 1e-6);
        assert!((s.h_max() - 0.693147).abs() < 1e-6);
        assert_eq!(s.status, SessionStatus::Open);
    }

    #[test]
    fn uniform_two_tight_tolerance() {
        let s = open_session("i", uniform(2), 0.9, 5).unwrap();
        assert!((s.h_max() - 0.069315).abs() < 1e-6);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(open_session("i", uniform(2), 0.0, 5).is_err());
        assert!(open_session("i", uniform(2), 1.0, 5).is_err());
        assert!(open_session("i", uniform(2), 0.5, 0).is_err());
    }

    #[test]
    fn identical_distribution_is_non_progress_but_not_fatal() {
        let s = open_session("i", uniform(4), 0.5, 5).unwrap();
        let (next, report) = clarify_round(&s, uniform(4)).unwrap();
        assert_eq!(report.delta, 0.0);
        assert!(report.non_progress);
        assert_eq!(next.status, SessionStatus::Open);
    }

    #[test]
    fn halving_the_candidates_reduces_entropy_by_ln_two() {
        let s = open_session("i", uniform(4), 0.5, 5).unwrap();
        let (_, report) = clarify_round(&s, uniform(2)).unwrap();
        assert!((report.delta - 2.0f64.ln()).abs() < 1e-9);
        assert!(!report.non_progress);
    }

    #[test]
    fn fixture_trace_converges_at_round_two() {
        // uniform-4 → {0.7, 0.2, 0.1} → point mass:
        // entropies 1.386294, 0.801819, 0.
        let s = open_session("i", uniform(4), 0.5, 5).unwrap();
        let skewed = SuitabilityDistribution::new(vec![
            ("a".into(), 0.7),
            ("b".into(), 0.2),
            ("c".into(), 0.1),
        ])
        .unwrap();
        let (s, r1) = clarify_round(&s, skewed).unwrap();
        assert!((r1.entropy - 0.801819).abs() < 1e-6);
        assert_eq!(r1.decision, ConvergenceDecision::Continue);
        let (s, r2) = clarify_round(&s, SuitabilityDistribution::point_mass("a")).unwrap();
        assert_eq!(r2.entropy, 0.0);
        assert_eq!(r2.decision, ConvergenceDecision::Converged);
        assert_eq!(s.status, SessionStatus::Converged);
        assert_eq!(s.round, 2);
        let expect = [1.386294, 0.801819, 0.0];
        for (got, want) in s.entropy_trace.iter().zip(expect) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn boundary_entropy_counts_as_converged() {
        let mut s = open_session("i", uniform(4), 0.5, 5).unwrap();
        s.entropy_trace.push(s.h_max());
        s.round = 1;
        assert_eq!(check_convergence(&s), ConvergenceDecision::Converged);
    }

    #[test]
    fn budget_exhaustion_triggers_fallback() {
        let mut s = open_session("i", uniform(4), 0.5, 3).unwrap();
        for _ in 0..3 {
            let (next, _) = clarify_round(&s, uniform(4)).unwrap();
            s = next;
        }
        assert_eq!(s.status, SessionStatus::FallbackTriggered);
        assert_eq!(check_convergence(&s), ConvergenceDecision::TriggerFallback);
        // And the budget is actually spent.
        assert!(clarify_round(&s, uniform(2)).is_err());
    }

    #[test]
    fn early_round_above_budget_continues() {
        let s = open_session("i", uniform(4), 0.5, 5).unwrap();
        let (s, report) = clarify_round(&s, uniform(3)).unwrap();
        assert_eq!(report.decision, ConvergenceDecision::Continue);
        assert_eq!(s.status, SessionStatus::Open);
    }

    #[test]
    fn renegotiation_resets_budget_with_fresh_h0() {
        let s = open_session("i", uniform(3), 0.5, 5).unwrap();
        let withdrawn = BTreeSet::from(["c0".to_string()]);
        let next = renegotiate(&s, FailureKind::CapabilityUnavailable, &withdrawn).unwrap();
        assert!((next.h0 - 2.0f64.ln()).abs() < 1e-9);
        assert_eq!(next.round, 0);
        assert_eq!(next.renegotiations, 1);
        assert_eq!(next.interaction_id, s.interaction_id);
    }

    #[test]
    fn withdrawing_everything_recommends_dissolution() {
        let s = open_session("i", uniform(2), 0.5, 5).unwrap();
        let withdrawn = BTreeSet::from(["c0".to_string(), "c1".to_string()]);
        assert!(matches!(
            renegotiate(&s, FailureKind::CapabilityUnavailable, &withdrawn),
            Err(NegotiationError::NoSurvivingCandidates)
        ));
    }
}
