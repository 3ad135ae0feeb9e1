//! Flash-loan governance attack: borrow, propose, vote, execute and repay
//! inside one epoch.

use std::collections::BTreeSet;
use std::fmt;

use commons_core::governance::{
    GovernanceConfig, GovernanceMode, ProposalKind, ProposalState, RejectReason, TallyOutcome,
};
use commons_core::{Account, Amount, ArcId, Commons, CommonsConfig, CommonsError, Epoch, ProposalId, SoulId};
use serde::{Deserialize, Serialize};

use crate::scenario::DEFAULT_LOAN;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockReason {
    NoVotingPower,
    TimelockActive,
    Rejected(RejectReason),
    Failed(String),
}

impl fmt::Display for BlockReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockReason::NoVotingPower => f.write_str("NoVotingPower"),
            BlockReason::TimelockActive => f.write_str("TimelockActive"),
            BlockReason::Rejected(r) => write!(f, "{r:?}"),
            BlockReason::Failed(m) => write!(f, "Failed({m})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackOutcome {
    Succeeded,
    Blocked(BlockReason),
}

impl fmt::Display for AttackOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackOutcome::Succeeded => f.write_str("Succeeded"),
            AttackOutcome::Blocked(r) => write!(f, "Blocked:{r}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackReport {
    pub outcome: AttackOutcome,
    pub epoch: Epoch,
    pub loan_amount: Amount,
    pub proposal: Option<ProposalId>,
    pub treasury_before: Amount,
    pub treasury_after: Amount,
    pub treasury_delta: i128,
    /// The loan was burned back before the epoch ended.
    pub repaid: bool,
    /// A proposal left queued behind the timelock was vetoed by the council.
    pub vetoed: bool,
}

fn blocked(e: CommonsError) -> BlockReason {
    match e {
        CommonsError::NoVotingPower => BlockReason::NoVotingPower,
        CommonsError::TimelockActive { .. } => BlockReason::TimelockActive,
        other => BlockReason::Failed(other.to_string()),
    }
}

/// Runs the attack against `arc` at the current epoch. The attacker must be
/// a member. If the malicious proposal ends the epoch queued, `council`
/// vetoes it when it can.
pub fn execute_flashloan(
    c: &mut Commons,
    arc: ArcId,
    attacker: SoulId,
    loan: Amount,
    council: &BTreeSet<SoulId>,
) -> AttackReport {
    let epoch = c.now();
    let before = c.arc(arc).map_or(0, |a| a.treasury);
    let mut proposal = None;
    let mut repaid = false;
    let mut vetoed = false;

    let mut attempt = || -> Result<(), BlockReason> {
        c.mint(attacker, loan).map_err(blocked)?;
        let kind = ProposalKind::TreasurySpend {
            to: Account::Soul(attacker),
            amount: before,
        };
        let p = c.submit_proposal(arc, attacker, kind).map_err(blocked)?;
        proposal = Some(p);
        let a = c.arc(arc).map_err(blocked)?;
        match a.config.mode {
            GovernanceMode::TokenOnly => {
                c.cast_token_vote(p, attacker, true).map_err(blocked)?;
            }
            GovernanceMode::Bicameral => {
                // tokens buy no plural weight; spend the whole budget anyway
                let votes = commons_core::governance::max_affordable_votes(
                    a.config.voice_credits_per_round,
                    a.config.qv_cost_mode,
                );
                c.cast_plural_vote(p, attacker, votes as i64).map_err(blocked)?;
                let _ = c.cast_epistemic_vote(p, attacker, true);
            }
        }
        if let TallyOutcome::Rejected(r) = c.tally(p).map_err(blocked)? {
            return Err(BlockReason::Rejected(r));
        }
        c.execute(p).map_err(blocked)?;
        Ok(())
    };
    let result = attempt();

    // repay before the epoch closes
    if c.burn(attacker, loan).is_ok() {
        repaid = true;
    }
    if let Some(p) = proposal {
        let queued = c.proposal(p).is_ok_and(|x| x.state == ProposalState::Queued);
        if queued {
            let m = c.arc(arc).map_or(usize::MAX, |a| a.config.veto_council_m_of_n.0);
            let signers: BTreeSet<SoulId> = council.iter().take(m).copied().collect();
            vetoed = c.council_veto(p, &signers).is_ok();
        }
    }

    let after = c.arc(arc).map_or(0, |a| a.treasury);
    let outcome = match result {
        Ok(()) if after < before => AttackOutcome::Succeeded,
        Ok(()) => AttackOutcome::Blocked(BlockReason::Failed("treasury unchanged".into())),
        Err(r) => AttackOutcome::Blocked(r),
    };
    AttackReport {
        outcome,
        epoch,
        loan_amount: loan,
        proposal,
        treasury_before: before,
        treasury_after: after,
        treasury_delta: i128::from(after) - i128::from(before),
        repaid,
        vetoed,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlashLoanParams {
    pub loan_amount: Amount,
    pub treasury: Amount,
    pub timelock: bool,
    pub snapshot: bool,
    pub seed: u64,
}

impl Default for FlashLoanParams {
    fn default() -> Self {
        FlashLoanParams {
            loan_amount: DEFAULT_LOAN,
            treasury: DEFAULT_LOAN,
            timelock: true,
            snapshot: true,
            seed: 0,
        }
    }
}

/// Honest holders in the standalone attack ARC and their balances.
pub const HONEST_MEMBERS: usize = 10;
pub const HONEST_BALANCE: Amount = 1_000_000;

/// The attack against a fresh token-only ARC: ten honest holders (five of
/// them on the founder council), an attacker with no tokens of its own, and
/// `params.treasury` in the treasury.
pub fn run_attack_flashloan(params: &FlashLoanParams) -> AttackReport {
    let mut c = Commons::new(CommonsConfig {
        seed: params.seed,
        ..CommonsConfig::default()
    });
    let honest: Vec<SoulId> = (0..HONEST_MEMBERS).map(|_| c.create_soul()).collect();
    for h in &honest {
        c.mint(*h, HONEST_BALANCE).expect("fresh soul");
    }
    let attacker = c.create_soul();
    let config = GovernanceConfig {
        mode: GovernanceMode::TokenOnly,
        timelock_enabled: params.timelock,
        snapshot_voting: params.snapshot,
        ..GovernanceConfig::default()
    };
    let n = config.veto_council_m_of_n.1;
    let council: Vec<SoulId> = honest[..n].to_vec();
    let mut members = honest.clone();
    members.push(attacker);
    let arc = c.create_arc(members, council.clone(), config).expect("valid arc");
    if params.treasury > 0 {
        c.mint_treasury(Account::Arc(arc), params.treasury).expect("treasury");
    }
    c.advance_epoch(1).expect("clock");
    let report = execute_flashloan(
        &mut c,
        arc,
        attacker,
        params.loan_amount,
        &council.into_iter().collect(),
    );
    debug_assert_eq!(c.check_invariants(), Ok(()));
    report
}
