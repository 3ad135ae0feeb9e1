//! Executes a scenario epoch by epoch against a fresh commons.

use std::collections::{BTreeMap, BTreeSet};

use commons_core::funding::{MilestoneSpec, Project};
use commons_core::governance::{GovernanceMode, ProposalKind, TallyOutcome};
use commons_core::ipmarket::{BondingCurve, RoyaltyShare, SellPenalty};
use commons_core::{
    canonical, Account, ArcId, AssetId, Bps, Commons, CommonsConfig, CommonsError, Epoch, PoolId, ProgramId,
    ProposalId, RoundId, SoulId,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attack::{execute_flashloan, AttackReport};
use crate::metrics::{effective_power, gini, participation};
use crate::report::{Capture, EpochMetrics, ProposalSummary, SimReport, StepFailure};
use crate::scenario::{Action, Metric, ProposalSpec, Role, Roster, Scenario, ARC_ACCOUNT};
use crate::SimError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Replaces the scenario seed.
    pub seed: Option<u64>,
    /// Replaces the scenario governance mode.
    pub mode: Option<GovernanceMode>,
}

/// A finished run: the report plus the final state, whose event log replays
/// to the same state hash.
#[derive(Clone, Debug)]
pub struct SimRun {
    pub report: SimReport,
    pub commons: Commons,
    pub arc: ArcId,
    /// Soul of each expanded agent, in roster order.
    pub souls: Vec<(String, SoulId)>,
}

struct Runner<'a> {
    scenario: &'a Scenario,
    c: Commons,
    arc: ArcId,
    roster: Roster,
    souls: Vec<SoulId>,
    council: BTreeSet<SoulId>,
    rng: ChaCha8Rng,
    proposals: BTreeMap<String, ProposalId>,
    rounds: BTreeMap<String, RoundId>,
    programs: BTreeMap<String, ProgramId>,
    assets: BTreeMap<String, AssetId>,
    pools: BTreeMap<String, PoolId>,
    captures: Vec<Capture>,
    failures: Vec<StepFailure>,
    attack: Option<AttackReport>,
    epoch: Epoch,
    step: usize,
}

pub fn run(scenario: &Scenario, opts: &RunOptions) -> Result<SimRun, SimError> {
    let problems = crate::scenario::validate(scenario);
    if !problems.is_empty() {
        return Err(crate::scenario::LoadError(problems).into());
    }
    let seed = opts.seed.unwrap_or(scenario.seed);
    let mut r = Runner::setup(scenario, seed, opts.mode)?;

    let mut steps: Vec<(usize, &crate::scenario::Step)> = scenario.script.iter().enumerate().collect();
    steps.sort_by_key(|(_, s)| s.at);
    let mut next = 0;
    let mut series = Vec::new();
    for t in 0..=scenario.last_epoch() {
        if t > 0 {
            r.c.advance_epoch(1).map_err(|e| SimError::Setup(e.to_string()))?;
            r.check(None)?;
        }
        r.epoch = t;
        if let Some(a) = scenario.attack.as_ref().filter(|a| a.at == t) {
            let attacker = r.soul_of(&a.attacker);
            let council = r.council.clone();
            let report = execute_flashloan(&mut r.c, r.arc, attacker, a.loan_amount, &council);
            r.attack = Some(report);
            r.check(None)?;
        }
        while next < steps.len() && steps[next].1.at == t {
            let (idx, step) = steps[next];
            r.step = idx;
            r.apply(&step.action);
            r.check(Some(idx))?;
            next += 1;
        }
        series.push(r.metrics(t));
    }
    Ok(r.finish(seed, series))
}

impl<'a> Runner<'a> {
    fn setup(s: &'a Scenario, seed: u64, mode: Option<GovernanceMode>) -> Result<Self, SimError> {
        let fail = |e: CommonsError| SimError::Setup(e.to_string());
        let mut c = Commons::new(CommonsConfig {
            seed,
            ..CommonsConfig::default()
        });
        let roster = Roster::new(&s.agents);
        let souls: Vec<SoulId> = roster.agents.iter().map(|_| c.create_soul()).collect();
        let mut council = BTreeSet::new();
        for (agent, soul) in roster.agents.iter().zip(&souls) {
            let spec = &s.agents[agent.entry];
            if spec.tokens > 0 {
                c.mint(*soul, spec.tokens).map_err(fail)?;
            }
            if spec.council {
                council.insert(*soul);
            }
        }
        let mut config = s.governance.clone();
        if let Some(m) = mode {
            config.mode = m;
        }
        let arc = c
            .create_arc(souls.clone(), council.iter().copied().collect(), config)
            .map_err(fail)?;
        if s.treasury > 0 {
            c.mint_treasury(Account::Arc(arc), s.treasury).map_err(fail)?;
        }
        for (agent, soul) in roster.agents.iter().zip(&souls) {
            for (cat, n) in &s.agents[agent.entry].sbts {
                for k in 0..*n {
                    let meta = BTreeMap::from([
                        ("holder".to_owned(), agent.name.clone()),
                        ("title".to_owned(), format!("{} {}", cat.as_str(), k + 1)),
                    ]);
                    c.issue_sbt(arc, *soul, *cat, meta).map_err(fail)?;
                }
            }
        }
        let r = Runner {
            scenario: s,
            c,
            arc,
            roster,
            souls,
            council,
            rng: ChaCha8Rng::seed_from_u64(seed),
            proposals: BTreeMap::new(),
            rounds: BTreeMap::new(),
            programs: BTreeMap::new(),
            assets: BTreeMap::new(),
            pools: BTreeMap::new(),
            captures: Vec::new(),
            failures: Vec::new(),
            epoch: 0,
            step: 0,
            attack: None,
        };
        r.check(None)?;
        Ok(r)
    }

    fn check(&self, step: Option<usize>) -> Result<(), SimError> {
        self.c
            .check_invariants()
            .map_err(|invariant| SimError::InvariantViolation {
                location: match step {
                    Some(i) => format!("epoch {}, script[{i}]", self.epoch),
                    None => format!("epoch {}", self.epoch),
                },
                invariant,
            })
    }

    fn group(&self, r: &str) -> Vec<usize> {
        self.roster.resolve(r).expect("validated reference")
    }

    fn soul_of(&self, r: &str) -> SoulId {
        self.souls[self.roster.resolve_one(r).expect("validated reference")]
    }

    fn account(&self, r: &str) -> Account {
        if r == ARC_ACCOUNT {
            Account::Arc(self.arc)
        } else {
            Account::Soul(self.soul_of(r))
        }
    }

    fn fail(&mut self, agent: Option<usize>, e: CommonsError) {
        self.note(agent, format!("{e:?}"));
    }

    fn note(&mut self, agent: Option<usize>, error: String) {
        self.failures.push(StepFailure {
            epoch: self.epoch,
            step: self.step,
            agent: agent.map(|i| self.roster.agents[i].name.clone()),
            error,
        });
    }

    /// Id behind a script label; labels whose defining step failed are
    /// recorded as failures.
    fn label<T: Copy>(&mut self, map: fn(&Self) -> &BTreeMap<String, T>, label: &str) -> Option<T> {
        let found = map(self).get(label).copied();
        if found.is_none() {
            self.note(None, format!("{label:?} was never created"));
        }
        found
    }

    fn each(&mut self, who: &str, mut f: impl FnMut(&mut Commons, SoulId) -> Result<(), CommonsError>) {
        for i in self.group(who) {
            if let Err(e) = f(&mut self.c, self.souls[i]) {
                self.fail(Some(i), e);
            }
        }
    }

    fn one(&mut self, res: Result<(), CommonsError>) {
        if let Err(e) = res {
            self.fail(None, e);
        }
    }

    /// Deterministic turnout sample, kept in roster order.
    fn sample(&mut self, mut idx: Vec<usize>, frac: f64) -> Vec<usize> {
        if frac >= 1.0 {
            return idx;
        }
        let k = (idx.len() as f64 * frac).round() as usize;
        idx.shuffle(&mut self.rng);
        idx.truncate(k);
        idx.sort_unstable();
        idx
    }

    fn apply(&mut self, action: &Action) {
        match action {
            Action::Propose { id, proposer, kind } => {
                let kind = match kind {
                    ProposalSpec::TreasurySpend { to, amount } => ProposalKind::TreasurySpend {
                        to: Account::Soul(self.soul_of(to)),
                        amount: *amount,
                    },
                    ProposalSpec::ParameterChange { change } => {
                        ProposalKind::ParameterChange { change: change.clone() }
                    }
                    ProposalSpec::Constitutional { change } => ProposalKind::Constitutional { change: change.clone() },
                };
                let who = self.soul_of(proposer);
                match self.c.submit_proposal(self.arc, who, kind) {
                    Ok(p) => {
                        self.proposals.insert(id.clone(), p);
                    }
                    Err(e) => self.fail(None, e),
                }
            }
            Action::Vote {
                proposal,
                voters,
                support,
                intensity,
                sample,
            } => {
                let Some(p) = self.label(|r| &r.proposals, proposal) else {
                    return;
                };
                let all = self.group(voters);
                let chosen = self.sample(all, *sample);
                let mode = self.c.arc(self.arc).expect("arc").config.mode;
                let votes = i64::try_from(*intensity).unwrap_or(i64::MAX);
                let signed = if *support { votes } else { -votes };
                for i in chosen {
                    let v = self.souls[i];
                    let res = match mode {
                        GovernanceMode::TokenOnly => self.c.cast_token_vote(p, v, *support).map(|_| ()),
                        GovernanceMode::Bicameral => {
                            let plural = self.c.cast_plural_vote(p, v, signed).map(|_| ());
                            let has_rep = self.c.reputation_score(v).is_ok_and(|r| *r.numer() > 0)
                                && !self.c.delegations().contains_key(&v);
                            let epistemic = if has_rep {
                                self.c.cast_epistemic_vote(p, v, *support).map(|_| ())
                            } else {
                                Ok(())
                            };
                            plural.and(epistemic)
                        }
                    };
                    if let Err(e) = res {
                        self.fail(Some(i), e);
                    }
                }
            }
            Action::Delegate { from, to } => {
                let to = self.soul_of(to);
                self.each(from, |c, s| c.delegate(s, to));
            }
            Action::Undelegate { from } => self.each(from, |c, s| c.undelegate(s)),
            Action::Tally { proposal } => {
                let Some(p) = self.label(|r| &r.proposals, proposal) else {
                    return;
                };
                self.detect_capture(proposal, p);
                let res = self.c.tally(p).map(|_| ());
                self.one(res);
            }
            Action::Execute { proposal } => {
                let Some(p) = self.label(|r| &r.proposals, proposal) else {
                    return;
                };
                let res = self.c.execute(p).map(|_| ());
                self.one(res);
            }
            Action::Veto { proposal, signers } => {
                let set: BTreeSet<SoulId> = self.group(signers).into_iter().map(|i| self.souls[i]).collect();
                let Some(p) = self.label(|r| &r.proposals, proposal) else {
                    return;
                };
                let res = self.c.council_veto(p, &set);
                self.one(res);
            }
            Action::Mint { to, amount } => self.each(to, |c, s| c.mint(s, *amount).map(|_| ())),
            Action::Transfer { from, to, amount } => {
                let to = self.soul_of(to);
                self.each(from, |c, s| c.transfer(s, to, *amount));
            }
            Action::IssueSbt { to, category, count } => {
                let arc = self.arc;
                let epoch = self.epoch;
                self.each(to, |c, s| {
                    for k in 0..*count {
                        let meta = BTreeMap::from([
                            ("epoch".to_owned(), epoch.to_string()),
                            ("title".to_owned(), format!("{} {}", category.as_str(), k + 1)),
                        ]);
                        c.issue_sbt(arc, s, *category, meta)?;
                    }
                    Ok(())
                });
            }
            Action::OpenRound {
                id,
                funder,
                pool,
                projects,
                mode,
            } => {
                let funder = self.account(funder);
                let projects = projects
                    .iter()
                    .map(|p| Project {
                        id: p.id.clone(),
                        recipient: Account::Soul(self.soul_of(&p.recipient)),
                    })
                    .collect();
                match self.c.open_round(funder, *pool, projects, *mode, None) {
                    Ok(r) => {
                        self.rounds.insert(id.clone(), r);
                    }
                    Err(e) => self.fail(None, e),
                }
            }
            Action::Contribute {
                round,
                from,
                project,
                amount,
            } => {
                let Some(r) = self.label(|r| &r.rounds, round) else {
                    return;
                };
                self.each(from, |c, s| c.contribute(r, s, project, *amount));
            }
            Action::SettleRound { round } => {
                let Some(r) = self.label(|r| &r.rounds, round) else {
                    return;
                };
                let res = self.c.settle_round(r).map(|_| ());
                self.one(res);
            }
            Action::CreateProgram {
                id,
                director,
                funder,
                budget,
                milestones,
            } => {
                let specs = milestones
                    .iter()
                    .map(|m| MilestoneSpec {
                        description: m.description.clone(),
                        tranche: m.tranche,
                        recipient: Account::Soul(self.soul_of(&m.recipient)),
                    })
                    .collect();
                let director = self.soul_of(director);
                let funder = self.account(funder);
                match self.c.create_mission_program(director, funder, *budget, specs) {
                    Ok(p) => {
                        self.programs.insert(id.clone(), p);
                    }
                    Err(e) => self.fail(None, e),
                }
            }
            Action::ReportMilestone { program, index } => {
                let Some(p) = self.label(|r| &r.programs, program) else {
                    return;
                };
                let res = self.c.report_milestone(p, *index);
                self.one(res);
            }
            Action::ReleaseTranche { program, index } => {
                let Some(p) = self.label(|r| &r.programs, program) else {
                    return;
                };
                let res = self.c.release_tranche(p, *index).map(|_| ());
                self.one(res);
            }
            Action::MintIpNft {
                id,
                owner,
                split,
                open_access,
            } => {
                let shares = split
                    .iter()
                    .map(|s| RoyaltyShare {
                        recipient: Account::Soul(self.soul_of(&s.to)),
                        bps: s.bps,
                    })
                    .collect();
                let owner = Account::Soul(self.soul_of(owner));
                let commitment = canonical::hex_digest(&canonical::sha256(&[id.as_bytes()]));
                match self.c.mint_ipnft(owner, commitment, *open_access, shares) {
                    Ok(a) => {
                        self.assets.insert(id.clone(), a);
                    }
                    Err(e) => self.fail(None, e),
                }
            }
            Action::Royalties { asset, payer, revenue } => {
                let Some(a) = self.label(|r| &r.assets, asset) else {
                    return;
                };
                let res = self
                    .c
                    .distribute_royalties(a, self.soul_of(payer), *revenue)
                    .map(|_| ());
                self.one(res);
            }
            Action::License {
                asset,
                licensee,
                price,
                exclusive,
            } => {
                let Some(a) = self.label(|r| &r.assets, asset) else {
                    return;
                };
                let owner = self.c.asset(a).expect("known asset").owner;
                let res = self
                    .c
                    .grant_commercial_license(a, owner, self.soul_of(licensee), *price, *exclusive)
                    .map(|_| ());
                self.one(res);
            }
            Action::Fractionalize {
                asset,
                supply_cap,
                base_price,
                slope,
                penalty_bps,
                horizon_epochs,
            } => {
                let Some(a) = self.label(|r| &r.assets, asset) else {
                    return;
                };
                let owner = self.c.asset(a).expect("known asset").owner;
                let curve = BondingCurve {
                    base_price: *base_price,
                    slope: *slope,
                };
                let penalty = SellPenalty {
                    max_fraction: Bps(*penalty_bps),
                    horizon_epochs: *horizon_epochs,
                };
                match self.c.fractionalize(a, owner, *supply_cap, curve, penalty, self.arc) {
                    Ok(p) => {
                        self.pools.insert(asset.clone(), p);
                    }
                    Err(e) => self.fail(None, e),
                }
            }
            Action::Buy { asset, buyer, units } => {
                let Some(p) = self.label(|r| &r.pools, asset) else {
                    return;
                };
                self.each(buyer, |c, s| c.curve_buy(p, s, *units).map(|_| ()));
            }
            Action::Sell { asset, seller, units } => {
                let Some(p) = self.label(|r| &r.pools, asset) else {
                    return;
                };
                self.each(seller, |c, s| c.curve_sell(p, s, *units).map(|_| ()));
            }
        }
    }

    /// Records a capture when an approval would flip without the ballots
    /// of whale-role agents.
    fn detect_capture(&mut self, label: &str, p: ProposalId) {
        if self.c.evaluate_tally(p, &BTreeSet::new()) != Ok(TallyOutcome::Approved) {
            return;
        }
        let prop = self.c.proposal(p).expect("known proposal");
        let voted = |s: &SoulId| {
            prop.plural.contains_key(s) || prop.epistemic.contains_key(s) || prop.token_votes.contains_key(s)
        };
        let whales: Vec<usize> = (0..self.souls.len())
            .filter(|i| matches!(self.roster.agents[*i].role, Role::Whale | Role::Attacker))
            .filter(|i| voted(&self.souls[*i]))
            .collect();
        if whales.is_empty() {
            return;
        }
        let exclude: BTreeSet<SoulId> = whales.iter().map(|i| self.souls[*i]).collect();
        if let Ok(TallyOutcome::Rejected(reason)) = self.c.evaluate_tally(p, &exclude) {
            self.captures.push(Capture {
                epoch: self.epoch,
                proposal: label.to_owned(),
                by: whales.iter().map(|i| self.roster.agents[*i].name.clone()).collect(),
                counterfactual: format!("Rejected({reason:?})"),
            });
        }
    }

    fn metrics(&self, t: Epoch) -> EpochMetrics {
        let want = |m: Metric| self.scenario.metrics.contains(&m);
        let arc = self.c.arc(self.arc).expect("arc");
        let latest = self.c.proposals().filter(|p| p.arc == self.arc).last();
        EpochMetrics {
            epoch: t,
            gini: want(Metric::Gini)
                .then(|| gini(&effective_power(&self.c, self.arc)).ok())
                .flatten(),
            participation: want(Metric::Participation)
                .then(|| latest.map_or(0.0, |p| participation(p, arc.config.mode))),
            treasury: want(Metric::Treasury).then_some(arc.treasury),
        }
    }

    fn finish(self, seed: u64, series: Vec<EpochMetrics>) -> SimRun {
        let mut event_counts: BTreeMap<String, u64> = BTreeMap::new();
        for r in self.c.log().records() {
            *event_counts.entry(r.kind.clone()).or_default() += 1;
        }
        let proposals = self
            .proposals
            .iter()
            .map(|(label, id)| {
                let p = self.c.proposal(*id).expect("known proposal");
                ProposalSummary {
                    label: label.clone(),
                    id: *id,
                    state: format!("{:?}", p.state),
                    outcome: p.outcome.map(|o| match o {
                        TallyOutcome::Approved => "Approved".to_owned(),
                        TallyOutcome::Rejected(r) => format!("Rejected({r:?})"),
                    }),
                }
            })
            .collect();
        let mode = self.c.arc(self.arc).expect("arc").config.mode;
        let report = SimReport {
            scenario: self.scenario.name.clone(),
            seed,
            mode,
            series,
            event_counts,
            proposals,
            captures: self.captures,
            attack: self.attack,
            failures: self.failures,
            final_state_hash: canonical::hex_digest(&self.c.state_hash()),
            log_head: canonical::hex_digest(&self.c.log().head()),
            content_hash: String::new(),
        }
        .seal();
        let souls = self
            .roster
            .agents
            .iter()
            .zip(&self.souls)
            .map(|(a, s)| (a.name.clone(), *s))
            .collect();
        SimRun {
            report,
            commons: self.c,
            arc: self.arc,
            souls,
        }
    }
}
