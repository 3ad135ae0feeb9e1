//! Quadratic-funding rounds and milestone-gated mission programs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::alloc;
use crate::canonical;
use crate::error::{CommonsError, Result};
use crate::ids::{Account, Amount, ProgramId, RoundId, SoulId};
use crate::reputation::Category;
use crate::state::{Command, Commons};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchingMode {
    /// Match proportional to `(Σ √c)²`.
    #[default]
    ProportionalSquares,
    /// Match proportional to `(Σ √c)² − Σ c`, the part the crowd did not pay.
    ClrSurplus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Project {
    pub id: String,
    pub recipient: Account,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contribution {
    pub contributor: SoulId,
    pub project: String,
    pub amount: Amount,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundState {
    Open,
    Settled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectMatch {
    pub project: String,
    /// `(Σ_i √c_i)²` over per-contributor totals.
    pub score: f64,
    pub contributed: Amount,
    pub matched: Amount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub round: RoundId,
    pub mode: MatchingMode,
    pub pool: Amount,
    pub projects: Vec<ProjectMatch>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payout {
    pub project: String,
    pub recipient: Account,
    pub amount: Amount,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FundingRound {
    pub id: RoundId,
    pub funder: Account,
    pub pool: Amount,
    /// Sorted by project id.
    pub projects: Vec<Project>,
    pub contributions: Vec<Contribution>,
    pub mode: MatchingMode,
    pub require_stake: Option<Category>,
    pub state: RoundState,
    pub payouts: Vec<Payout>,
}

impl FundingRound {
    /// Tokens escrowed by the round right now.
    pub fn held(&self) -> Amount {
        match self.state {
            RoundState::Open => self.pool + self.contributions.iter().map(|c| c.amount).sum::<Amount>(),
            RoundState::Settled => 0,
        }
    }

    pub fn contributed(&self) -> Amount {
        self.contributions.iter().map(|c| c.amount).sum()
    }
}

/// Per-project totals of each contributor, summed before any square root.
fn aggregate(projects: &[String], contributions: &[Contribution]) -> Vec<BTreeMap<SoulId, Amount>> {
    let index: BTreeMap<&str, usize> = projects.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    let mut per: Vec<BTreeMap<SoulId, Amount>> = vec![BTreeMap::new(); projects.len()];
    for c in contributions {
        if let Some(&i) = index.get(c.project.as_str()) {
            *per[i].entry(c.contributor).or_default() += c.amount;
        }
    }
    per
}

/// Quadratic-funding match of `pool` over `projects` (sorted ids).
/// Returns `None` when nobody contributed.
pub fn compute_match(
    pool: Amount,
    mode: MatchingMode,
    projects: &[String],
    contributions: &[Contribution],
) -> Option<Vec<ProjectMatch>> {
    if contributions.iter().all(|c| c.amount == 0) {
        return None;
    }
    let per = aggregate(projects, contributions);
    let scores: Vec<f64> = per
        .iter()
        .map(|m| {
            let s: f64 = m.values().map(|c| (*c as f64).sqrt()).sum();
            s * s
        })
        .collect();
    let totals: Vec<Amount> = per.iter().map(|m| m.values().sum()).collect();
    let raw: Vec<f64> = match mode {
        MatchingMode::ProportionalSquares => scores.clone(),
        MatchingMode::ClrSurplus => scores
            .iter()
            .zip(&totals)
            .map(|(s, t)| (s - *t as f64).max(0.0))
            .collect(),
    };
    let sum: f64 = raw.iter().sum();
    let quotas: Vec<f64> = if sum > 0.0 {
        raw.iter().map(|r| pool as f64 * r / sum).collect()
    } else {
        vec![pool as f64 / projects.len() as f64; projects.len()]
    };
    let matched = alloc::by_quotas(pool, &quotas);
    Some(
        projects
            .iter()
            .enumerate()
            .map(|(i, p)| ProjectMatch {
                project: p.clone(),
                score: scores[i],
                contributed: totals[i],
                matched: matched[i],
            })
            .collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MilestoneStatus {
    Pending,
    Reported,
    Released,
    Cancelled,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MilestoneSpec {
    pub description: String,
    pub tranche: Amount,
    pub recipient: Account,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Milestone {
    pub description_digest: String,
    pub tranche: Amount,
    pub recipient: Account,
    pub status: MilestoneStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MissionProgram {
    pub id: ProgramId,
    pub director: SoulId,
    pub funder: Account,
    pub budget: Amount,
    pub released: Amount,
    pub milestones: Vec<Milestone>,
}

impl MissionProgram {
    pub fn remaining(&self) -> Amount {
        self.budget - self.released
    }
}

/// One row of a contribution import.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContributionRow {
    pub contributor: u64,
    pub project: String,
    pub amount: Amount,
}

/// Reads `contributor,project,amount` CSV with integer amounts.
pub fn parse_contributions_csv(text: &str) -> Result<Vec<ContributionRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| CommonsError::BadCsv(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["contributor", "project", "amount"] {
        return Err(CommonsError::BadCsv(format!(
            "expected header contributor,project,amount, found {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| CommonsError::BadCsv(e.to_string())))
        .collect()
}

fn treasury_short(e: CommonsError) -> CommonsError {
    match e {
        CommonsError::InsufficientFree {
            account: Account::Arc(arc),
            needed,
            available,
        } => CommonsError::InsufficientTreasury { arc, needed, available },
        other => other,
    }
}

impl Commons {
    pub fn round(&self, id: RoundId) -> Result<&FundingRound> {
        self.rounds.get(&id).ok_or(CommonsError::UnknownRound(id))
    }

    pub fn rounds(&self) -> impl Iterator<Item = &FundingRound> {
        self.rounds.values()
    }

    pub fn open_round(
        &mut self,
        funder: Account,
        pool: Amount,
        projects: Vec<Project>,
        mode: MatchingMode,
        require_stake: Option<Category>,
    ) -> Result<RoundId> {
        if pool == 0 {
            return Err(CommonsError::ZeroAmount);
        }
        if projects.is_empty() {
            return Err(CommonsError::EmptyProjects);
        }
        let mut sorted = projects.clone();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = sorted.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(CommonsError::DuplicateProject(w[0].id.clone()));
        }
        for p in &sorted {
            self.check_account(p.recipient)?;
        }
        self.debit(funder, pool).map_err(treasury_short)?;
        let id = RoundId(self.ids.next_round());
        self.rounds.insert(
            id,
            FundingRound {
                id,
                funder,
                pool,
                projects: sorted,
                contributions: Vec::new(),
                mode,
                require_stake,
                state: RoundState::Open,
                payouts: Vec::new(),
            },
        );
        self.record(Command::OpenRound {
            funder,
            pool,
            projects,
            mode,
            require_stake,
        });
        Ok(id)
    }

    pub fn contribute(&mut self, round: RoundId, soul: SoulId, project: &str, amount: Amount) -> Result<()> {
        let r = self.round(round)?;
        if r.state != RoundState::Open {
            return Err(CommonsError::RoundClosed(round));
        }
        if !r.projects.iter().any(|p| p.id == project) {
            return Err(CommonsError::UnknownProject(project.to_owned()));
        }
        if amount == 0 {
            return Err(CommonsError::ZeroAmount);
        }
        if let Some(cat) = r.require_stake {
            self.soul(soul)?;
            if !self.has_active_stake(soul, cat) {
                return Err(CommonsError::StakeRequired);
            }
        }
        self.debit(Account::Soul(soul), amount)?;
        self.rounds
            .get_mut(&round)
            .expect("checked")
            .contributions
            .push(Contribution {
                contributor: soul,
                project: project.to_owned(),
                amount,
            });
        self.record(Command::Contribute {
            round,
            soul,
            project: project.to_owned(),
            amount,
        });
        Ok(())
    }

    /// Pure matching computation over the round as it stands.
    pub fn compute_matching(&self, round: RoundId) -> Result<MatchResult> {
        let r = self.round(round)?;
        if r.state != RoundState::Open {
            return Err(CommonsError::AlreadySettled(round));
        }
        let ids: Vec<String> = r.projects.iter().map(|p| p.id.clone()).collect();
        let projects =
            compute_match(r.pool, r.mode, &ids, &r.contributions).ok_or(CommonsError::NoContributions(round))?;
        Ok(MatchResult {
            round,
            mode: r.mode,
            pool: r.pool,
            projects,
        })
    }

    /// Pays every project its contributions plus its match. A round nobody
    /// contributed to refunds the pool to the funder.
    pub fn settle_round(&mut self, round: RoundId) -> Result<Vec<Payout>> {
        let r = self.round(round)?;
        if r.state == RoundState::Settled {
            return Err(CommonsError::AlreadySettled(round));
        }
        let funder = r.funder;
        let pool = r.pool;
        let payouts: Vec<Payout> = match self.compute_matching(round) {
            Ok(m) => r
                .projects
                .iter()
                .zip(&m.projects)
                .map(|(p, pm)| Payout {
                    project: p.id.clone(),
                    recipient: p.recipient,
                    amount: pm.contributed + pm.matched,
                })
                .collect(),
            Err(CommonsError::NoContributions(_)) => r
                .projects
                .iter()
                .map(|p| Payout {
                    project: p.id.clone(),
                    recipient: p.recipient,
                    amount: 0,
                })
                .collect(),
            Err(e) => return Err(e),
        };
        let paid: Amount = payouts.iter().map(|p| p.amount).sum();
        for p in payouts.iter().filter(|p| p.amount > 0) {
            self.credit(p.recipient, p.amount)?;
        }
        if paid == 0 {
            self.credit(funder, pool)?;
        }
        let r = self.rounds.get_mut(&round).expect("checked");
        r.state = RoundState::Settled;
        r.payouts = payouts.clone();
        self.record(Command::SettleRound { round });
        Ok(payouts)
    }

    pub fn program(&self, id: ProgramId) -> Result<&MissionProgram> {
        self.programs.get(&id).ok_or(CommonsError::UnknownProgram(id))
    }

    pub fn create_mission_program(
        &mut self,
        director: SoulId,
        funder: Account,
        budget: Amount,
        milestones: Vec<MilestoneSpec>,
    ) -> Result<ProgramId> {
        self.soul(director)?;
        if budget == 0 {
            return Err(CommonsError::ZeroAmount);
        }
        for m in &milestones {
            self.check_account(m.recipient)?;
        }
        self.debit(funder, budget).map_err(treasury_short)?;
        let id = ProgramId(self.ids.next_program());
        self.programs.insert(
            id,
            MissionProgram {
                id,
                director,
                funder,
                budget,
                released: 0,
                milestones: milestones
                    .iter()
                    .map(|m| Milestone {
                        description_digest: canonical::hex_digest(&canonical::sha256(&[m.description.as_bytes()])),
                        tranche: m.tranche,
                        recipient: m.recipient,
                        status: MilestoneStatus::Pending,
                    })
                    .collect(),
            },
        );
        self.record(Command::CreateProgram {
            director,
            funder,
            budget,
            milestones,
        });
        Ok(id)
    }

    fn milestone(&self, program: ProgramId, index: usize) -> Result<&Milestone> {
        self.program(program)?
            .milestones
            .get(index)
            .ok_or(CommonsError::UnknownMilestone { program, index })
    }

    pub fn report_milestone(&mut self, program: ProgramId, index: usize) -> Result<()> {
        if self.milestone(program, index)?.status != MilestoneStatus::Pending {
            return Err(CommonsError::MilestoneNotPending(index));
        }
        self.programs.get_mut(&program).expect("checked").milestones[index].status = MilestoneStatus::Reported;
        self.record(Command::ReportMilestone { program, index });
        Ok(())
    }

    pub fn release_tranche(&mut self, program: ProgramId, index: usize) -> Result<Amount> {
        let m = self.milestone(program, index)?;
        let prog = self.program(program)?;
        let settled = |s: MilestoneStatus| matches!(s, MilestoneStatus::Released | MilestoneStatus::Cancelled);
        if !prog.milestones[..index].iter().all(|m| settled(m.status)) {
            return Err(CommonsError::OutOfOrder(index));
        }
        if m.status != MilestoneStatus::Reported {
            return Err(CommonsError::NotReported(index));
        }
        if m.tranche > prog.remaining() {
            return Err(CommonsError::BudgetExceeded {
                needed: m.tranche,
                remaining: prog.remaining(),
            });
        }
        let (tranche, recipient) = (m.tranche, m.recipient);
        if tranche > 0 {
            self.credit(recipient, tranche)?;
        }
        let prog = self.programs.get_mut(&program).expect("checked");
        prog.released += tranche;
        prog.milestones[index].status = MilestoneStatus::Released;
        self.record(Command::ReleaseTranche { program, index });
        Ok(tranche)
    }

    pub fn cancel_milestone(&mut self, program: ProgramId, index: usize) -> Result<()> {
        let status = self.milestone(program, index)?.status;
        if !matches!(status, MilestoneStatus::Pending | MilestoneStatus::Reported) {
            return Err(CommonsError::MilestoneNotPending(index));
        }
        self.programs.get_mut(&program).expect("checked").milestones[index].status = MilestoneStatus::Cancelled;
        self.record(Command::CancelMilestone { program, index });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::governance::GovernanceConfig;
    use crate::ids::ArcId;
    use crate::state::CommonsConfig;

    fn contribs(spec: &[(u64, &str, Amount)]) -> Vec<Contribution> {
        spec.iter()
            .map(|&(s, p, a)| Contribution {
                contributor: SoulId(s),
                project: p.into(),
                amount: a,
            })
            .collect()
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn headline_breadth_example() {
        let mut c: Vec<_> = (0..100).map(|i| (i, "A", 1)).collect();
        c.push((1000, "B", 100));
        let m = compute_match(
            1010,
            MatchingMode::ProportionalSquares,
            &ids(&["A", "B"]),
            &contribs(&c),
        )
        .unwrap();
        assert_eq!(m[0].score, 10_000.0);
        assert_eq!(m[1].score, 100.0);
        assert_eq!((m[0].matched, m[1].matched), (1000, 10));
    }

    #[test]
    fn single_project_takes_pool() {
        let m = compute_match(777, MatchingMode::ClrSurplus, &ids(&["A"]), &contribs(&[(1, "A", 5)])).unwrap();
        assert_eq!(m[0].matched, 777);
    }

    #[test]
    fn symmetric_projects_split_evenly() {
        let c = contribs(&[(1, "A", 4), (2, "A", 9), (3, "B", 4), (4, "B", 9)]);
        let m = compute_match(1001, MatchingMode::ProportionalSquares, &ids(&["A", "B"]), &c).unwrap();
        assert_eq!((m[0].matched, m[1].matched), (501, 500));
    }

    #[test]
    fn repeat_contributions_aggregate_before_sqrt() {
        let split = contribs(&[(1, "A", 3), (1, "A", 6), (2, "B", 9)]);
        let lump = contribs(&[(1, "A", 9), (2, "B", 9)]);
        let p = ids(&["A", "B"]);
        assert_eq!(
            compute_match(100, MatchingMode::ProportionalSquares, &p, &split),
            compute_match(100, MatchingMode::ProportionalSquares, &p, &lump)
        );
    }

    #[test]
    fn clr_surplus_all_zero_splits_equally() {
        // single-donor projects have zero surplus
        let c = contribs(&[(1, "A", 4), (2, "B", 9), (3, "C", 1)]);
        let m = compute_match(10, MatchingMode::ClrSurplus, &ids(&["A", "B", "C"]), &c).unwrap();
        assert_eq!(m.iter().map(|x| x.matched).collect::<Vec<_>>(), [4, 3, 3]);
        assert!(compute_match(10, MatchingMode::ClrSurplus, &ids(&["A"]), &[]).is_none());
    }

    #[test]
    fn csv_import() {
        let rows = parse_contributions_csv("contributor,project,amount\n1,A,10\n2,B,3\n").unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(
            rows[1],
            ContributionRow {
                contributor: 2,
                project: "B".into(),
                amount: 3
            }
        );
        assert!(parse_contributions_csv("who,what,how\n1,A,1\n").is_err());
        assert!(parse_contributions_csv("contributor,project,amount\n1,A,1.5\n").is_err());
    }

    struct World {
        c: Commons,
        arc: ArcId,
        souls: Vec<SoulId>,
    }

    fn world(n: usize) -> World {
        let mut c = Commons::new(CommonsConfig::default());
        let souls: Vec<_> = (0..n).map(|_| c.create_soul()).collect();
        for s in &souls {
            c.mint(*s, 1_000).unwrap();
        }
        let arc = c
            .create_arc(souls.clone(), vec![], GovernanceConfig::default())
            .unwrap();
        c.mint_treasury(Account::Arc(arc), 5_000).unwrap();
        World { c, arc, souls }
    }

    fn two_projects(w: &World) -> Vec<Project> {
        vec![
            Project {
                id: "A".into(),
                recipient: Account::Soul(w.souls[0]),
            },
            Project {
                id: "B".into(),
                recipient: Account::Soul(w.souls[1]),
            },
        ]
    }

    #[test]
    fn round_lifecycle_conserves() {
        let mut w = world(6);
        let projects = two_projects(&w);
        let before = w.c.arc(w.arc).unwrap().treasury;
        let r =
            w.c.open_round(
                Account::Arc(w.arc),
                1010,
                projects,
                MatchingMode::ProportionalSquares,
                None,
            )
            .unwrap();
        assert_eq!(w.c.arc(w.arc).unwrap().treasury, before - 1010);
        for s in &w.souls[2..] {
            w.c.contribute(r, *s, "A", 25).unwrap();
        }
        w.c.contribute(r, w.souls[2], "B", 100).unwrap();
        let supply = w.c.total_supply();
        let pays = w.c.settle_round(r).unwrap();
        let total: Amount = pays.iter().map(|p| p.amount).sum();
        assert_eq!(total, 1010 + 200);
        assert_eq!(w.c.total_supply(), supply);
        assert_eq!(w.c.settle_round(r), Err(CommonsError::AlreadySettled(r)));
        assert_eq!(w.c.contribute(r, w.souls[3], "A", 1), Err(CommonsError::RoundClosed(r)));
    }

    #[test]
    fn empty_round_refunds_pool() {
        let mut w = world(2);
        let projects = two_projects(&w);
        let before = w.c.arc(w.arc).unwrap().treasury;
        let r =
            w.c.open_round(Account::Arc(w.arc), 300, projects, MatchingMode::ClrSurplus, None)
                .unwrap();
        assert_eq!(w.c.compute_matching(r), Err(CommonsError::NoContributions(r)));
        let pays = w.c.settle_round(r).unwrap();
        assert!(pays.iter().all(|p| p.amount == 0));
        assert_eq!(w.c.arc(w.arc).unwrap().treasury, before);
    }

    #[test]
    fn open_round_errors() {
        let mut w = world(2);
        let projects = two_projects(&w);
        let funder = Account::Arc(w.arc);
        assert_eq!(
            w.c.open_round(funder, 0, projects.clone(), MatchingMode::ProportionalSquares, None),
            Err(CommonsError::ZeroAmount)
        );
        assert_eq!(
            w.c.open_round(funder, 10, vec![], MatchingMode::ProportionalSquares, None),
            Err(CommonsError::EmptyProjects)
        );
        assert!(matches!(
            w.c.open_round(funder, 10_000, projects, MatchingMode::ProportionalSquares, None),
            Err(CommonsError::InsufficientTreasury { .. })
        ));
    }

    #[test]
    fn stake_gated_round() {
        let mut w = world(3);
        let projects = two_projects(&w);
        let reviewer = w.souls[2];
        let t =
            w.c.issue_sbt(w.arc, reviewer, Category::PeerReview, BTreeMap::new())
                .unwrap();
        let r =
            w.c.open_round(
                Account::Arc(w.arc),
                100,
                projects,
                MatchingMode::ProportionalSquares,
                Some(Category::PeerReview),
            )
            .unwrap();
        assert_eq!(w.c.contribute(r, reviewer, "A", 10), Err(CommonsError::StakeRequired));
        w.c.stake_sbt(reviewer, t, 30).unwrap();
        w.c.contribute(r, reviewer, "A", 10).unwrap();
        assert_eq!(w.c.contribute(r, w.souls[0], "B", 10), Err(CommonsError::StakeRequired));
        assert!(matches!(
            w.c.contribute(r, reviewer, "A", 10_000),
            Err(CommonsError::InsufficientFree { .. })
        ));
    }

    #[test]
    fn milestones_release_in_order() {
        let mut w = world(2);
        let to = Account::Soul(w.souls[1]);
        let specs = (1..=3)
            .map(|i| MilestoneSpec {
                description: format!("phase {i}"),
                tranche: 100,
                recipient: to,
            })
            .collect();
        let p =
            w.c.create_mission_program(w.souls[0], Account::Arc(w.arc), 250, specs)
                .unwrap();
        w.c.report_milestone(p, 1).unwrap();
        assert_eq!(w.c.release_tranche(p, 1), Err(CommonsError::OutOfOrder(1)));
        assert_eq!(w.c.release_tranche(p, 0), Err(CommonsError::NotReported(0)));
        w.c.report_milestone(p, 0).unwrap();
        assert_eq!(w.c.release_tranche(p, 0).unwrap(), 100);
        assert_eq!(w.c.program(p).unwrap().remaining(), 150);
        w.c.release_tranche(p, 1).unwrap();
        w.c.report_milestone(p, 2).unwrap();
        assert_eq!(
            w.c.release_tranche(p, 2),
            Err(CommonsError::BudgetExceeded {
                needed: 100,
                remaining: 50
            })
        );
        w.c.cancel_milestone(p, 2).unwrap();
        assert_eq!(w.c.balance(w.souls[1]).unwrap(), 1_200);
    }
}
