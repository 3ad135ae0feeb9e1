//! Inequality and participation metrics.

use commons_core::governance::{max_affordable_votes, GovernanceMode, Proposal};
use commons_core::{ArcId, Commons};

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum GiniError {
    #[error("gini of an empty list")]
    Empty,
    #[error("gini of all-zero weights")]
    AllZero,
}

/// Gini coefficient `Σᵢ Σⱼ |xᵢ − xⱼ| / (2 n² μ)`, computed in O(n log n)
/// from the sorted values.
pub fn gini(weights: &[f64]) -> Result<f64, GiniError> {
    if weights.is_empty() {
        return Err(GiniError::Empty);
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(GiniError::AllZero);
    }
    let mut xs = weights.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let weighted: f64 = xs
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i as f64 + 1.0) - n - 1.0) * x)
        .sum();
    Ok((weighted / (n * total)).max(0.0))
}

/// Effective voting power of every ARC member. Token-only: token balance.
/// Bicameral: reputation plus the largest plural vote a full credit budget
/// buys.
pub fn effective_power(c: &Commons, arc: ArcId) -> Vec<f64> {
    let a = c.arc(arc).expect("scenario arc");
    match a.config.mode {
        GovernanceMode::TokenOnly => a.members.iter().map(|m| c.balance(*m).unwrap_or(0) as f64).collect(),
        GovernanceMode::Bicameral => {
            let plural = max_affordable_votes(a.config.voice_credits_per_round, a.config.qv_cost_mode) as f64;
            a.members
                .iter()
                .map(|m| {
                    let rep = c
                        .reputation_score(*m)
                        .map_or(0.0, |r| *r.numer() as f64 / *r.denom() as f64);
                    rep + plural
                })
                .collect()
        }
    }
}

/// Share of the electorate that cast a ballot on `p` in the chamber that
/// counts turnout.
pub fn participation(p: &Proposal, mode: GovernanceMode) -> f64 {
    if p.electorate == 0 {
        return 0.0;
    }
    let ballots = match mode {
        GovernanceMode::Bicameral => p.plural.len(),
        GovernanceMode::TokenOnly => p.token_votes.len(),
    };
    ballots as f64 / p.electorate as f64
}
