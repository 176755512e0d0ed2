//! Semantic entropy over candidate message structures, score blending,
//! and normalization of judgments into a distribution.

use serde::{Deserialize, Serialize};

use super::adjudicator::CandidateJudgment;
use super::SemanticsError;

/// Tolerance for checking that a distribution sums to one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Probability distribution over candidate message structures. Early in a
/// negotiation the entries are capability ids; once a full-coverage plan
/// is composed the distribution collapses to a point mass on the plan id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuitabilityDistribution {
    /// `(structure id, probability)` pairs.
    pub entries: Vec<(String, f64)>,
}

impl SuitabilityDistribution {
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self, SemanticsError> {
        let dist = SuitabilityDistribution { entries };
        dist.validate()?;
        Ok(dist)
    }

    /// Degenerate distribution: all mass on one structure.
    pub fn point_mass(id: impl Into<String>) -> Self {
        SuitabilityDistribution {
            entries: vec![(id.into(), 1.0)],
        }
    }

    /// Uniform distribution over the given ids.
    pub fn uniform<I: IntoIterator<Item = S>, S: Into<String>>(ids: I) -> Result<Self, SemanticsError> {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        if ids.is_empty() {
            return Err(SemanticsError::EmptyDistribution);
        }
        let p = 1.0 / ids.len() as f64;
        Ok(SuitabilityDistribution {
            entries: ids.into_iter().map(|id| (id, p)).collect(),
        })
    }

    pub fn validate(&self) -> Result<(), SemanticsError> {
        if self.entries.is_empty() {
            return Err(SemanticsError::EmptyDistribution);
        }
        let mut sum = 0.0;
        for (id, p) in &self.entries {
            if !p.is_finite() || *p < 0.0 {
                return Err(SemanticsError::InvalidProbability {
                    id: id.clone(),
                    value: *p,
                });
            }
            sum += p;
        }
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(SemanticsError::Unnormalized { sum });
        }
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    /// Drop the listed structures and renormalize over the survivors.
    /// Returns `None` when nothing (with positive mass) survives.
    pub fn without(&self, removed: &std::collections::BTreeSet<String>) -> Option<Self> {
        let surviving: Vec<(String, f64)> = self
            .entries
            .iter()
            .filter(|(id, _)| !removed.contains(id))
            .cloned()
            .collect();
        let total: f64 = surviving.iter().map(|(_, p)| p).sum();
        if surviving.is_empty() || total <= 0.0 {
            return None;
        }
        Some(SuitabilityDistribution {
            entries: surviving.into_iter().map(|(id, p)| (id, p / total)).collect(),
        })
    }
}

/// Shannon entropy of the distribution in nats, with the convention
/// `0 · ln 0 = 0`. Errors on an unnormalized distribution.
pub fn entropy(dist: &SuitabilityDistribution) -> Result<f64, SemanticsError> {
    dist.validate()?;
    let mut h = 0.0;
    for (_, p) in &dist.entries {
        if *p > 0.0 {
            h -= p * p.ln();
        }
    }
    // Rounding can produce a tiny negative value for a point mass.
    Ok(h.max(0.0))
}

/// Blend semantic suitability with the historical outcome prior:
/// `alpha·s + (1−alpha)·rho`.
pub fn blend_score(s: f64, rho: f64, alpha: f64) -> Result<f64, SemanticsError> {
    for (name, v) in [("s", s), ("rho", rho), ("alpha", alpha)] {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(SemanticsError::OutOfRange {
                name: name.to_string(),
                value: v,
            });
        }
    }
    Ok(alpha * s + (1.0 - alpha) * rho)
}

/// Turn judgments into a probability distribution: `p_k = s'_k / Σ s'`,
/// using blended scores when present and raw suitability otherwise.
pub fn normalize_judgments(
    judgments: &[CandidateJudgment],
) -> Result<SuitabilityDistribution, SemanticsError> {
    if judgments.is_empty() {
        return Err(SemanticsError::EmptyDistribution);
    }
    let total: f64 = judgments.iter().map(|j| j.effective_score()).sum();
    if total <= 0.0 {
        return Err(SemanticsError::NoViableCandidates);
    }
    Ok(SuitabilityDistribution {
        entries: judgments
            .iter()
            .map(|j| (j.capability_id.clone(), j.effective_score() / total))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::adjudicator::CandidateJudgment;

    fn judgment(id: &str, s: f64) -> CandidateJudgment {
        CandidateJudgment {
            capability_id: id.to_string(),
            suitability: s,
            rationale: vec![],
            blended: None,
        }
    }

    #[test]
    fn point_mass_has_zero_entropy() {
        assert_eq!(entropy(&SuitabilityDistribution::point_mass("a")).unwrap(), 0.0);
    }

    #[test]
    fn uniform_four_is_ln_four() {
        let d = SuitabilityDistribution::uniform(["a", "b", "c", "d"]).unwrap();
        assert!((entropy(&d).unwrap() - 4.0f64.ln()).abs() < 1e-9);
        assert!((entropy(&d).unwrap() - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn skewed_distribution_hand_computed() {
        // −(0.5 ln 0.5 + 0.25 ln 0.25 + 0.25 ln 0.25)
        let d = SuitabilityDistribution::new(vec![
            ("a".into(), 0.5),
            ("b".into(), 0.25),
            ("c".into(), 0.25),
        ])
        .unwrap();
        assert!((entropy(&d).unwrap() - 1.039721).abs() < 1e-6);
    }

    #[test]
    fn unnormalized_rejected() {
        let d = SuitabilityDistribution {
            entries: vec![("a".into(), 0.6), ("b".into(), 0.6)],
        };
        assert!(matches!(entropy(&d), Err(SemanticsError::Unnormalized { .. })));
    }

    #[test]
    fn blend_score_identities() {
        assert_eq!(blend_score(0.3, 0.9, 1.0).unwrap(), 0.3);
        assert_eq!(blend_score(0.3, 0.9, 0.0).unwrap(), 0.9);
        assert!((blend_score(0.8, 0.4, 0.5).unwrap() - 0.6).abs() < 1e-12);
        assert!(blend_score(1.2, 0.4, 0.5).is_err());
    }

    #[test]
    fn normalize_examples() {
        let single = normalize_judgments(&[judgment("a", 0.4)]).unwrap();
        assert_eq!(single.entries, vec![("a".to_string(), 1.0)]);

        let equal = normalize_judgments(&[judgment("a", 0.5), judgment("b", 0.5)]).unwrap();
        assert_eq!(equal.entries[0].1, 0.5);

        let already = normalize_judgments(&[
            judgment("a", 0.6),
            judgment("b", 0.3),
            judgment("c", 0.1),
        ])
        .unwrap();
        assert!((already.entries[0].1 - 0.6).abs() < 1e-12);
        assert!((already.entries[2].1 - 0.1).abs() < 1e-12);

        assert!(matches!(
            normalize_judgments(&[judgment("a", 0.0)]),
            Err(SemanticsError::NoViableCandidates)
        ));
    }
}
