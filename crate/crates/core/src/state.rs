//! The `Commons` state machine, its command vocabulary, replay, and the
//! global invariants.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::canonical::{self, Digest};
use crate::error::{CommonsError, Result};
use crate::funding::{FundingRound, MatchingMode, MilestoneSpec, MissionProgram, Project};
use crate::governance::{Arc, GovernanceConfig, Proposal, ProposalKind};
use crate::ids::{
    Account, Amount, ArcId, AssetId, Epoch, PoolId, ProgramId, ProposalId, RoundId, SbtId, ScheduleId, Score, SoulId,
    StakeId,
};
use crate::ipmarket::{BondingCurve, IpAsset, IptPool, RoyaltyReceipt, RoyaltyShare, SellPenalty};
use crate::ledger::{EventLog, EventRecord, Soul, VestingSchedule};
use crate::reputation::{Category, ReputationStake, ReputationWeights, Sbt, SbtSecret};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommonsConfig {
    /// Seeds the commitment-salt generator.
    pub seed: u64,
    pub protocol_fee_bps: u32,
    pub reputation_weights: ReputationWeights,
}

impl Default for CommonsConfig {
    fn default() -> Self {
        CommonsConfig {
            seed: 0,
            protocol_fee_bps: 50,
            reputation_weights: ReputationWeights::default(),
        }
    }
}

impl CommonsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.protocol_fee_bps > 10_000 {
            return Err(CommonsError::BadConfig("protocol fee above 10000 bps".into()));
        }
        self.reputation_weights.validate()
    }
}

/// Every logged state change. The serialized form is the event payload.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    Genesis {
        config: CommonsConfig,
    },
    CreateSoul,
    Mint {
        soul: SoulId,
        amount: Amount,
    },
    Burn {
        soul: SoulId,
        amount: Amount,
    },
    Transfer {
        from: SoulId,
        to: SoulId,
        amount: Amount,
    },
    MintTreasury {
        account: Account,
        amount: Amount,
    },
    CreateVesting {
        owner: SoulId,
        total: Amount,
        cliff_epochs: Epoch,
        duration_epochs: Epoch,
    },
    ClaimVested {
        schedule: ScheduleId,
    },
    AdvanceEpoch {
        n: Epoch,
    },
    IssueSbt {
        issuer: ArcId,
        subject: SoulId,
        category: Category,
        metadata: BTreeMap<String, String>,
    },
    RevokeSbt {
        sbt: SbtId,
        proposal: ProposalId,
    },
    AppealSbt {
        sbt: SbtId,
    },
    StakeSbt {
        soul: SoulId,
        sbt: SbtId,
        until_epoch: Epoch,
    },
    Unstake {
        stake: StakeId,
    },
    CreateArc {
        members: Vec<SoulId>,
        founder_council: Vec<SoulId>,
        config: GovernanceConfig,
    },
    SubmitProposal {
        arc: ArcId,
        proposer: SoulId,
        kind: ProposalKind,
    },
    CastPluralVote {
        proposal: ProposalId,
        voter: SoulId,
        votes: i64,
    },
    CastEpistemicVote {
        proposal: ProposalId,
        voter: SoulId,
        support: bool,
    },
    CastTokenVote {
        proposal: ProposalId,
        voter: SoulId,
        support: bool,
    },
    Delegate {
        delegator: SoulId,
        delegate: SoulId,
    },
    Undelegate {
        delegator: SoulId,
    },
    Tally {
        proposal: ProposalId,
    },
    CouncilVeto {
        proposal: ProposalId,
        signers: BTreeSet<SoulId>,
    },
    Execute {
        proposal: ProposalId,
    },
    ForkImport {
        snapshot: String,
    },
    OpenRound {
        funder: Account,
        pool: Amount,
        projects: Vec<Project>,
        mode: MatchingMode,
        require_stake: Option<Category>,
    },
    Contribute {
        round: RoundId,
        soul: SoulId,
        project: String,
        amount: Amount,
    },
    SettleRound {
        round: RoundId,
    },
    CreateProgram {
        director: SoulId,
        funder: Account,
        budget: Amount,
        milestones: Vec<MilestoneSpec>,
    },
    ReportMilestone {
        program: ProgramId,
        index: usize,
    },
    ReleaseTranche {
        program: ProgramId,
        index: usize,
    },
    CancelMilestone {
        program: ProgramId,
        index: usize,
    },
    MintIpNft {
        owner: Account,
        content_commitment: String,
        open_access: bool,
        royalty_split: Vec<RoyaltyShare>,
    },
    SetOpenAccess {
        asset: AssetId,
        open: bool,
    },
    DistributeRoyalties {
        asset: AssetId,
        payer: SoulId,
        revenue: Amount,
    },
    GrantLicense {
        asset: AssetId,
        caller: Account,
        licensee: SoulId,
        price: Amount,
        exclusive: bool,
    },
    Fractionalize {
        asset: AssetId,
        caller: Account,
        supply_cap: u64,
        curve: BondingCurve,
        penalty: SellPenalty,
        beneficiary: ArcId,
    },
    CurveBuy {
        pool: PoolId,
        buyer: SoulId,
        units: u64,
    },
    CurveSell {
        pool: PoolId,
        seller: SoulId,
        units: u64,
    },
}

impl Command {
    pub fn kind(&self) -> String {
        canonical::to_value(self)["op"].as_str().unwrap_or_default().to_owned()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub(crate) struct IdCounters {
    soul: u64,
    sbt: u64,
    stake: u64,
    schedule: u64,
    arc: u64,
    proposal: u64,
    round: u64,
    program: u64,
    asset: u64,
    pool: u64,
}

macro_rules! counter {
    ($($method:ident => $field:ident),* $(,)?) => {
        impl IdCounters {
            $(
                pub(crate) fn $method(&mut self) -> u64 {
                    self.$field += 1;
                    self.$field
                }
            )*
        }
    };
}

counter! {
    next_soul => soul,
    next_sbt => sbt,
    next_stake => stake,
    next_schedule => schedule,
    next_arc => arc,
    next_proposal => proposal,
    next_round => round,
    next_program => program,
    next_asset => asset,
    next_pool => pool,
}

/// The whole commons. Single-threaded and deterministic: the same commands
/// from the same config always produce the same state and log.
#[derive(Clone, Debug, Serialize)]
pub struct Commons {
    pub(crate) config: CommonsConfig,
    pub(crate) clock: Epoch,
    pub(crate) souls: BTreeMap<SoulId, Soul>,
    pub(crate) schedules: BTreeMap<ScheduleId, VestingSchedule>,
    pub(crate) commons_treasury: Amount,
    pub(crate) minted: Amount,
    pub(crate) burned: Amount,
    pub(crate) sbts: BTreeMap<SbtId, Sbt>,
    pub(crate) sbt_secrets: BTreeMap<SbtId, SbtSecret>,
    pub(crate) scores: BTreeMap<SoulId, Score>,
    pub(crate) stakes: BTreeMap<StakeId, ReputationStake>,
    pub(crate) appeals: BTreeMap<SbtId, ProposalId>,
    pub(crate) arcs: BTreeMap<ArcId, Arc>,
    pub(crate) proposals: BTreeMap<ProposalId, Proposal>,
    pub(crate) delegations: BTreeMap<SoulId, SoulId>,
    pub(crate) rounds: BTreeMap<RoundId, FundingRound>,
    pub(crate) programs: BTreeMap<ProgramId, MissionProgram>,
    pub(crate) assets: BTreeMap<AssetId, IpAsset>,
    pub(crate) pools: BTreeMap<PoolId, IptPool>,
    pub(crate) receipts: Vec<RoyaltyReceipt>,
    pub(crate) ids: IdCounters,
    #[serde(skip)]
    pub(crate) rng: ChaCha20Rng,
    #[serde(skip)]
    pub(crate) log: EventLog,
}

const _: () = {
    const fn assert_send<T: Send>() {}
    assert_send::<Commons>();
};

impl Commons {
    /// Panics on an invalid config; use [`Commons::try_new`] for untrusted
    /// input.
    pub fn new(config: CommonsConfig) -> Self {
        Self::try_new(config).expect("valid commons config")
    }

    pub fn try_new(config: CommonsConfig) -> Result<Self> {
        config.validate()?;
        let mut c = Commons {
            rng: ChaCha20Rng::seed_from_u64(config.seed),
            config: config.clone(),
            clock: 0,
            souls: BTreeMap::new(),
            schedules: BTreeMap::new(),
            commons_treasury: 0,
            minted: 0,
            burned: 0,
            sbts: BTreeMap::new(),
            sbt_secrets: BTreeMap::new(),
            scores: BTreeMap::new(),
            stakes: BTreeMap::new(),
            appeals: BTreeMap::new(),
            arcs: BTreeMap::new(),
            proposals: BTreeMap::new(),
            delegations: BTreeMap::new(),
            rounds: BTreeMap::new(),
            programs: BTreeMap::new(),
            assets: BTreeMap::new(),
            pools: BTreeMap::new(),
            receipts: Vec::new(),
            ids: IdCounters::default(),
            log: EventLog::default(),
        };
        c.record(Command::Genesis { config });
        Ok(c)
    }

    pub fn config(&self) -> &CommonsConfig {
        &self.config
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub(crate) fn record(&mut self, cmd: Command) {
        let payload = canonical::to_value(&cmd);
        let kind = payload["op"].as_str().expect("tagged command").to_owned();
        self.log.append(self.clock, &kind, payload);
    }

    /// Digest of the full state, excluding the log and the salt generator.
    pub fn state_hash(&self) -> Digest {
        canonical::hash_value(self)
    }

    /// Applies one command through the public API. Genesis is rejected.
    pub fn apply(&mut self, cmd: Command) -> Result<()> {
        use Command as C;
        match cmd {
            C::Genesis { .. } => {
                return Err(CommonsError::CorruptLog {
                    seq: self.log.len() as u64,
                    reason: "genesis after the first record".into(),
                })
            }
            C::CreateSoul => {
                self.create_soul();
            }
            C::Mint { soul, amount } => {
                self.mint(soul, amount)?;
            }
            C::Burn { soul, amount } => {
                self.burn(soul, amount)?;
            }
            C::Transfer { from, to, amount } => self.transfer(from, to, amount)?,
            C::MintTreasury { account, amount } => {
                self.mint_treasury(account, amount)?;
            }
            C::CreateVesting {
                owner,
                total,
                cliff_epochs,
                duration_epochs,
            } => {
                self.create_vesting(owner, total, cliff_epochs, duration_epochs)?;
            }
            C::ClaimVested { schedule } => {
                self.claim_vested(schedule)?;
            }
            C::AdvanceEpoch { n } => {
                self.advance_epoch(n)?;
            }
            C::IssueSbt {
                issuer,
                subject,
                category,
                metadata,
            } => {
                self.issue_sbt(issuer, subject, category, metadata)?;
            }
            C::RevokeSbt { sbt, proposal } => self.revoke_sbt(sbt, proposal)?,
            C::AppealSbt { sbt } => {
                self.appeal_sbt(sbt)?;
            }
            C::StakeSbt { soul, sbt, until_epoch } => {
                self.stake_sbt(soul, sbt, until_epoch)?;
            }
            C::Unstake { stake } => self.unstake(stake)?,
            C::CreateArc {
                members,
                founder_council,
                config,
            } => {
                self.create_arc(members, founder_council, config)?;
            }
            C::SubmitProposal { arc, proposer, kind } => {
                self.submit_proposal(arc, proposer, kind)?;
            }
            C::CastPluralVote { proposal, voter, votes } => {
                self.cast_plural_vote(proposal, voter, votes)?;
            }
            C::CastEpistemicVote {
                proposal,
                voter,
                support,
            } => {
                self.cast_epistemic_vote(proposal, voter, support)?;
            }
            C::CastTokenVote {
                proposal,
                voter,
                support,
            } => {
                self.cast_token_vote(proposal, voter, support)?;
            }
            C::Delegate { delegator, delegate } => self.delegate(delegator, delegate)?,
            C::Undelegate { delegator } => self.undelegate(delegator)?,
            C::Tally { proposal } => {
                self.tally(proposal)?;
            }
            C::CouncilVeto { proposal, signers } => self.council_veto(proposal, &signers)?,
            C::Execute { proposal } => {
                self.execute(proposal)?;
            }
            C::ForkImport { snapshot } => {
                self.fork_import(snapshot.as_bytes())?;
            }
            C::OpenRound {
                funder,
                pool,
                projects,
                mode,
                require_stake,
            } => {
                self.open_round(funder, pool, projects, mode, require_stake)?;
            }
            C::Contribute {
                round,
                soul,
                project,
                amount,
            } => self.contribute(round, soul, &project, amount)?,
            C::SettleRound { round } => {
                self.settle_round(round)?;
            }
            C::CreateProgram {
                director,
                funder,
                budget,
                milestones,
            } => {
                self.create_mission_program(director, funder, budget, milestones)?;
            }
            C::ReportMilestone { program, index } => self.report_milestone(program, index)?,
            C::ReleaseTranche { program, index } => {
                self.release_tranche(program, index)?;
            }
            C::CancelMilestone { program, index } => self.cancel_milestone(program, index)?,
            C::MintIpNft {
                owner,
                content_commitment,
                open_access,
                royalty_split,
            } => {
                self.mint_ipnft(owner, content_commitment, open_access, royalty_split)?;
            }
            C::SetOpenAccess { asset, open } => self.set_open_access(asset, open)?,
            C::DistributeRoyalties { asset, payer, revenue } => {
                self.distribute_royalties(asset, payer, revenue)?;
            }
            C::GrantLicense {
                asset,
                caller,
                licensee,
                price,
                exclusive,
            } => {
                self.grant_commercial_license(asset, caller, licensee, price, exclusive)?;
            }
            C::Fractionalize {
                asset,
                caller,
                supply_cap,
                curve,
                penalty,
                beneficiary,
            } => {
                self.fractionalize(asset, caller, supply_cap, curve, penalty, beneficiary)?;
            }
            C::CurveBuy { pool, buyer, units } => {
                self.curve_buy(pool, buyer, units)?;
            }
            C::CurveSell { pool, seller, units } => {
                self.curve_sell(pool, seller, units)?;
            }
        }
        Ok(())
    }

    /// Rebuilds a commons from a parsed log. Every record must re-execute
    /// and reproduce the stored hash.
    pub fn replay(records: &[EventRecord]) -> Result<Commons> {
        let corrupt = |seq: u64, reason: String| CommonsError::CorruptLog { seq, reason };
        let first = records.first().ok_or_else(|| corrupt(0, "empty log".into()))?;
        let config = match serde_json::from_value::<Command>(first.payload.clone()) {
            Ok(Command::Genesis { config }) => config,
            _ => return Err(corrupt(0, "first record is not genesis".into())),
        };
        let mut c = Commons::try_new(config).map_err(|e| corrupt(0, e.to_string()))?;
        check_record(&c, first)?;
        for rec in &records[1..] {
            let cmd: Command = serde_json::from_value(rec.payload.clone())
                .map_err(|e| corrupt(rec.seq, format!("unknown command: {e}")))?;
            c.apply(cmd)
                .map_err(|e| corrupt(rec.seq, format!("command failed on replay: {e}")))?;
            check_record(&c, rec)?;
        }
        Ok(c)
    }

    /// Checks every global invariant; returns the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let expected = u128::from(self.minted) - u128::from(self.burned);
        if self.total_supply() != expected {
            return Err(format!(
                "conservation: holdings {} != minted {} - burned {}",
                self.total_supply(),
                self.minted,
                self.burned
            ));
        }

        let mut locked: BTreeMap<SoulId, Amount> = BTreeMap::new();
        for s in self.schedules.values() {
            *locked.entry(s.owner).or_default() += s.outstanding();
        }
        for soul in self.souls.values() {
            let want = locked.get(&soul.id).copied().unwrap_or(0);
            if soul.locked != want {
                return Err(format!(
                    "{}: locked {} != outstanding vesting {want}",
                    soul.id, soul.locked
                ));
            }
            if soul.locked > soul.balance {
                return Err(format!("{}: locked exceeds balance", soul.id));
            }
        }

        let zero = Ratio::from_integer(0);
        for soul in self.souls.values() {
            let cached = self.scores.get(&soul.id).copied().unwrap_or(zero);
            let fresh = self
                .reputation(soul.id, &self.config.reputation_weights)
                .map_err(|e| e.to_string())?;
            if cached != fresh {
                return Err(format!("{}: cached reputation {cached} != {fresh}", soul.id));
            }
        }

        for arc in self.arcs.values() {
            for (round, spent) in &arc.credits {
                for (voter, used) in spent {
                    if *used > arc.config.voice_credits_per_round {
                        return Err(format!("{}: {voter} spent {used} credits in round {round}", arc.id));
                    }
                }
            }
        }

        for start in self.delegations.keys() {
            let mut seen = BTreeSet::from([*start]);
            let mut cur = *start;
            while let Some(next) = self.delegations.get(&cur) {
                if !seen.insert(*next) {
                    return Err(format!("delegation cycle through {start}"));
                }
                cur = *next;
            }
        }

        for r in &self.receipts {
            let paid: u128 = r.payouts.iter().map(|p| u128::from(p.1)).sum::<u128>() + u128::from(r.protocol_fee);
            if paid != u128::from(r.revenue) {
                return Err(format!("royalty receipt for {} pays {paid} of {}", r.asset, r.revenue));
            }
        }

        for p in self.pools.values() {
            let exact = p.curve.double_integral(0, p.supply);
            let twice = 2 * u128::from(p.reserve);
            if twice < exact || twice - exact > u128::from(p.trades) {
                return Err(format!(
                    "{}: reserve {} drifted from the curve integral",
                    p.id, p.reserve
                ));
            }
        }

        for prog in self.programs.values() {
            if prog.released > prog.budget {
                return Err(format!(
                    "{}: released {} over budget {}",
                    prog.id, prog.released, prog.budget
                ));
            }
        }
        Ok(())
    }
}

fn check_record(c: &Commons, rec: &EventRecord) -> Result<()> {
    let mine = c.log.records().last().expect("at least genesis");
    if mine.hash != rec.hash || mine.payload != rec.payload || mine.epoch != rec.epoch {
        return Err(CommonsError::CorruptLog {
            seq: rec.seq,
            reason: "replayed event does not match the log".into(),
        });
    }
    Ok(())
}
