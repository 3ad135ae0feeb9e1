//! ARC governance: proposal lifecycle, bicameral voting, liquid delegation,
//! timelocks, the founder veto council and fork export.
//!
//! Two chambers vote on every proposal. The Plural Chamber spends equal
//! voice-credit budgets under quadratic pricing; the Epistemic Chamber
//! weighs votes by reputation, including reputation delegated to the voter.
//! A proposal passes only if both chambers approve, and constitutional-class
//! proposals can additionally be blocked by a reputation minority.
//!
//! `GovernanceMode::TokenOnly` is one-token-one-vote and exists as the
//! baseline that bicameral voting is compared against.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::canonical::{self, Digest};
use crate::error::{CommonsError, Result};
use crate::ids::{Account, Amount, ArcId, Bps, Epoch, ProposalId, SbtId, Score, SoulId};
use crate::state::{Command, Commons};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GovernanceMode {
    #[default]
    Bicameral,
    TokenOnly,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum QvCostMode {
    /// Casting `v` votes costs `v²` in total.
    #[default]
    CumulativeSquare,
    /// The k-th vote costs `k²`, so `v` votes cost `1 + 4 + … + v²`.
    MarginalSquare,
}

/// Voice credits needed for `votes` votes in one direction. Saturates at
/// `u64::MAX`, which no budget can afford.
pub fn qv_cost(votes: u64, mode: QvCostMode) -> u64 {
    let v = u128::from(votes);
    let c = match mode {
        QvCostMode::CumulativeSquare => v * v,
        QvCostMode::MarginalSquare => v * (v + 1) * (2 * v + 1) / 6,
    };
    u64::try_from(c).unwrap_or(u64::MAX)
}

/// Largest vote count whose cost fits in `budget`.
pub fn max_affordable_votes(budget: u64, mode: QvCostMode) -> u64 {
    let mut lo = 0u64;
    let mut hi = budget.max(1);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if qv_cost(mid, mode) <= budget {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GovernanceConfig {
    pub mode: GovernanceMode,
    pub voice_credits_per_round: u64,
    /// Length of a voice-credit round.
    pub credit_round_epochs: Epoch,
    pub qv_cost_mode: QvCostMode,
    pub plural_quorum: Bps,
    pub epistemic_min_reputation: u64,
    pub timelock_enabled: bool,
    pub timelock_epochs: Epoch,
    pub snapshot_voting: bool,
    pub veto_council_m_of_n: (usize, usize),
    pub minority_veto_threshold: Bps,
    /// `(arc age in epochs, founder veto weight)` steps.
    pub founder_schedule: Vec<(Epoch, Bps)>,
}

impl Default for GovernanceConfig {
    fn default() -> Self {
        GovernanceConfig {
            mode: GovernanceMode::Bicameral,
            voice_credits_per_round: 100,
            credit_round_epochs: 30,
            qv_cost_mode: QvCostMode::CumulativeSquare,
            plural_quorum: Bps(1000),
            epistemic_min_reputation: 5,
            timelock_enabled: true,
            timelock_epochs: 3,
            snapshot_voting: true,
            veto_council_m_of_n: (3, 5),
            minority_veto_threshold: Bps(2000),
            founder_schedule: vec![(0, Bps(5100)), (360, Bps(4000)), (720, Bps(2000)), (1080, Bps(0))],
        }
    }
}

impl GovernanceConfig {
    pub const TIMELOCK_RANGE: std::ops::RangeInclusive<Epoch> = 2..=7;

    /// Every violated constraint, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.timelock_enabled && !Self::TIMELOCK_RANGE.contains(&self.timelock_epochs) {
            out.push(format!(
                "timelock_epochs {} outside the 2-7 epoch range required when the timelock defense is enabled",
                self.timelock_epochs
            ));
        }
        let (m, n) = self.veto_council_m_of_n;
        if m == 0 || m > n {
            out.push(format!("veto council {m}-of-{n} needs 1 <= m <= n"));
        }
        if !(Bps(1000)..=Bps(3000)).contains(&self.minority_veto_threshold) {
            out.push(format!(
                "minority_veto_threshold {} outside [0.10, 0.30]",
                self.minority_veto_threshold
            ));
        }
        if self.plural_quorum > Bps::ONE {
            out.push(format!("plural_quorum {} exceeds 1", self.plural_quorum));
        }
        if self.voice_credits_per_round == 0 {
            out.push("voice_credits_per_round must be positive".into());
        }
        if self.credit_round_epochs == 0 {
            out.push("credit_round_epochs must be positive".into());
        }
        let sched = &self.founder_schedule;
        if sched.first().map(|s| s.0) != Some(0) {
            out.push("founder_schedule must start at epoch 0".into());
        }
        if sched.last().map(|s| s.1) != Some(Bps::ZERO) {
            out.push("founder_schedule must end at weight 0".into());
        }
        if sched.windows(2).any(|w| w[1].0 <= w[0].0 || w[1].1 > w[0].1) {
            out.push("founder_schedule needs increasing epochs and non-increasing weights".into());
        }
        if sched.iter().any(|s| s.1 > Bps::ONE) {
            out.push("founder_schedule weight exceeds 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().into_iter().next() {
            None => Ok(()),
            Some(p) => Err(CommonsError::BadConfig(p)),
        }
    }

    pub fn effective_timelock(&self) -> Epoch {
        if self.timelock_enabled {
            self.timelock_epochs
        } else {
            0
        }
    }
}

/// Founder veto weight for an ARC that is `age` epochs old.
pub fn founder_veto_weight(config: &GovernanceConfig, age: Epoch) -> Bps {
    config
        .founder_schedule
        .iter()
        .rev()
        .find(|(from, _)| *from <= age)
        .map_or(Bps::ZERO, |(_, w)| *w)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "param", content = "value", rename_all = "snake_case")]
pub enum GovernanceParam {
    VoiceCredits(u64),
    PluralQuorum(Bps),
    EpistemicMinReputation(u64),
    TimelockEpochs(Epoch),
    TimelockEnabled(bool),
    SnapshotVoting(bool),
    MinorityVetoThreshold(Bps),
    Mode(GovernanceMode),
}

impl GovernanceParam {
    /// Parameters guarding the constitution itself; only a constitutional
    /// proposal may change them.
    pub fn is_safeguard(&self) -> bool {
        matches!(
            self,
            GovernanceParam::TimelockEpochs(_)
                | GovernanceParam::TimelockEnabled(_)
                | GovernanceParam::SnapshotVoting(_)
                | GovernanceParam::MinorityVetoThreshold(_)
                | GovernanceParam::Mode(_)
        )
    }

    pub fn apply(&self, config: &GovernanceConfig) -> Result<GovernanceConfig> {
        let mut c = config.clone();
        match *self {
            GovernanceParam::VoiceCredits(v) => c.voice_credits_per_round = v,
            GovernanceParam::PluralQuorum(q) => c.plural_quorum = q,
            GovernanceParam::EpistemicMinReputation(r) => c.epistemic_min_reputation = r,
            GovernanceParam::TimelockEpochs(t) => c.timelock_epochs = t,
            GovernanceParam::TimelockEnabled(b) => c.timelock_enabled = b,
            GovernanceParam::SnapshotVoting(b) => c.snapshot_voting = b,
            GovernanceParam::MinorityVetoThreshold(t) => c.minority_veto_threshold = t,
            GovernanceParam::Mode(m) => c.mode = m,
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProposalKind {
    TreasurySpend { to: Account, amount: Amount },
    ParameterChange { change: GovernanceParam },
    SbtRevocation { sbt: SbtId },
    SbtReinstate { sbt: SbtId },
    Constitutional { change: GovernanceParam },
}

impl ProposalKind {
    /// Subject to the minority veto.
    pub fn is_constitutional_class(&self) -> bool {
        matches!(
            self,
            ProposalKind::Constitutional { .. } | ProposalKind::SbtReinstate { .. }
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProposalState {
    Draft,
    Voting,
    Queued,
    Executed,
    Rejected,
    Vetoed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    QuorumFail,
    PluralOpposed,
    EpistemicOpposed,
    MinorityVeto,
    TokenOpposed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TallyOutcome {
    Approved,
    Rejected(RejectReason),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PluralBallot {
    pub votes: i64,
    pub credits_spent: u64,
    pub round: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EpistemicBallot {
    pub support: bool,
    pub weight: Score,
    /// Souls whose reputation this ballot carried (the voter first).
    pub carried: Vec<SoulId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TokenBallot {
    pub support: bool,
    pub weight: Amount,
}

/// Voting power frozen when voting opened.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VotingSnapshot {
    /// Token balances at the start of the snapshot epoch.
    pub tokens: BTreeMap<SoulId, Amount>,
    pub reputation: BTreeMap<SoulId, Score>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Proposal {
    pub id: ProposalId,
    pub arc: ArcId,
    pub proposer: SoulId,
    pub kind: ProposalKind,
    pub snapshot_epoch: Epoch,
    pub state: ProposalState,
    pub queued_until: Option<Epoch>,
    pub electorate: usize,
    pub snapshot: Option<VotingSnapshot>,
    pub plural: BTreeMap<SoulId, PluralBallot>,
    pub epistemic: BTreeMap<SoulId, EpistemicBallot>,
    pub token_votes: BTreeMap<SoulId, TokenBallot>,
    pub outcome: Option<TallyOutcome>,
}

impl Proposal {
    pub fn plural_net(&self) -> i64 {
        self.plural.values().map(|b| b.votes).sum()
    }

    pub fn plural_participation(&self) -> f64 {
        if self.electorate == 0 {
            0.0
        } else {
            self.plural.len() as f64 / self.electorate as f64
        }
    }

    /// Epistemic (yes, no) weight.
    pub fn epistemic_totals(&self) -> (Score, Score) {
        let zero = Ratio::from_integer(0);
        self.epistemic.values().fold((zero, zero), |(y, n), b| {
            if b.support {
                (y + b.weight, n)
            } else {
                (y, n + b.weight)
            }
        })
    }

    pub fn digest(&self) -> Digest {
        canonical::hash_value(self)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Arc {
    pub id: ArcId,
    pub members: BTreeSet<SoulId>,
    pub treasury: Amount,
    pub config: GovernanceConfig,
    pub founder_council: BTreeSet<SoulId>,
    pub created_epoch: Epoch,
    /// Voice credits spent, by credit round then voter.
    pub credits: BTreeMap<u64, BTreeMap<SoulId, u64>>,
    /// Proposal digests carried over from the ARC this one was forked from.
    pub inherited_history: Vec<String>,
}

impl Arc {
    pub fn credit_round(&self, now: Epoch) -> u64 {
        (now - self.created_epoch) / self.config.credit_round_epochs
    }

    pub fn credits_spent(&self, round: u64, voter: SoulId) -> u64 {
        self.credits
            .get(&round)
            .and_then(|m| m.get(&voter))
            .copied()
            .unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    TreasuryPaid { to: Account, amount: Amount },
    ConfigChanged { change: GovernanceParam },
    SbtRevoked { sbt: SbtId },
    SbtReinstated { sbt: SbtId },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectReceipt {
    pub proposal: ProposalId,
    pub epoch: Epoch,
    pub effect: Effect,
}

/// Body of a fork snapshot; everything the content hash covers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForkBody {
    pub members: BTreeSet<SoulId>,
    pub founder_council: BTreeSet<SoulId>,
    pub config: GovernanceConfig,
    pub treasury: Amount,
    pub proposal_history: Vec<String>,
    pub member_sbts: BTreeMap<SoulId, Vec<SbtId>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForkSnapshot {
    /// Source ARC; outside the content hash.
    pub arc_id: ArcId,
    pub body: ForkBody,
    /// SHA-256 over the whole envelope minus this field, so that the
    /// unhashed `arc_id` cannot be altered unnoticed either.
    pub checksum: String,
    /// SHA-256 of the canonical body.
    pub content_hash: String,
}

impl ForkSnapshot {
    fn envelope_checksum(arc_id: ArcId, body: &ForkBody, content_hash: &str) -> String {
        let env = serde_json::json!({
            "arc_id": arc_id,
            "body": canonical::to_value(body),
            "content_hash": content_hash,
        });
        canonical::hex_digest(&canonical::hash_value(&env))
    }

    pub fn seal(arc_id: ArcId, body: ForkBody) -> Self {
        let content_hash = canonical::hex_digest(&canonical::hash_value(&body));
        let checksum = Self::envelope_checksum(arc_id, &body, &content_hash);
        ForkSnapshot {
            arc_id,
            body,
            checksum,
            content_hash,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        canonical::to_bytes(self)
    }

    /// Parses and verifies both hashes and canonical form.
    pub fn open(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| CommonsError::CorruptSnapshot(m.to_owned());
        let text = std::str::from_utf8(bytes).map_err(|_| corrupt("not UTF-8"))?;
        let snap: ForkSnapshot =
            serde_json::from_str(text).map_err(|e| CommonsError::CorruptSnapshot(e.to_string()))?;
        if snap.to_bytes() != bytes {
            return Err(corrupt("not in canonical form"));
        }
        let expected = canonical::hex_digest(&canonical::hash_value(&snap.body));
        if expected != snap.content_hash {
            return Err(corrupt("content hash mismatch"));
        }
        if Self::envelope_checksum(snap.arc_id, &snap.body, &snap.content_hash) != snap.checksum {
            return Err(corrupt("checksum mismatch"));
        }
        Ok(snap)
    }
}

impl Commons {
    pub fn arc(&self, id: ArcId) -> Result<&Arc> {
        self.arcs.get(&id).ok_or(CommonsError::UnknownArc(id))
    }

    pub fn arcs(&self) -> impl Iterator<Item = &Arc> {
        self.arcs.values()
    }

    pub fn proposal(&self, id: ProposalId) -> Result<&Proposal> {
        self.proposals.get(&id).ok_or(CommonsError::UnknownProposal(id))
    }

    pub fn proposals(&self) -> impl Iterator<Item = &Proposal> {
        self.proposals.values()
    }

    pub fn delegations(&self) -> &BTreeMap<SoulId, SoulId> {
        &self.delegations
    }

    pub fn create_arc(
        &mut self,
        members: Vec<SoulId>,
        founder_council: Vec<SoulId>,
        config: GovernanceConfig,
    ) -> Result<ArcId> {
        config.validate()?;
        if members.is_empty() {
            return Err(CommonsError::BadConfig("an ARC needs at least one member".into()));
        }
        for s in members.iter().chain(&founder_council) {
            self.soul(*s)?;
        }
        let council: BTreeSet<_> = founder_council.iter().copied().collect();
        if !council.is_empty() && council.len() != config.veto_council_m_of_n.1 {
            return Err(CommonsError::BadConfig(format!(
                "founder council has {} members, config expects {}",
                council.len(),
                config.veto_council_m_of_n.1
            )));
        }
        let id = ArcId(self.ids.next_arc());
        self.arcs.insert(
            id,
            Arc {
                id,
                members: members.iter().copied().collect(),
                treasury: 0,
                config: config.clone(),
                founder_council: council,
                created_epoch: self.clock,
                credits: BTreeMap::new(),
                inherited_history: Vec::new(),
            },
        );
        self.record(Command::CreateArc {
            members,
            founder_council,
            config,
        });
        Ok(id)
    }

    fn member_check(&self, arc: &Arc, soul: SoulId) -> Result<()> {
        if arc.members.contains(&soul) {
            Ok(())
        } else {
            Err(CommonsError::NotMember { soul, arc: arc.id })
        }
    }

    pub fn submit_proposal(&mut self, arc: ArcId, proposer: SoulId, kind: ProposalKind) -> Result<ProposalId> {
        let a = self.arc(arc)?;
        self.member_check(a, proposer)?;
        if let ProposalKind::ParameterChange { change } = &kind {
            if change.is_safeguard() {
                return Err(CommonsError::BadConfig(format!(
                    "{change:?} requires a constitutional proposal"
                )));
            }
        }
        let id = self.open_proposal(arc, proposer, kind.clone())?;
        self.record(Command::SubmitProposal { arc, proposer, kind });
        Ok(id)
    }

    /// Creates a proposal directly in Voting with power frozen at the current
    /// epoch. Not logged on its own.
    pub(crate) fn open_proposal(&mut self, arc: ArcId, proposer: SoulId, kind: ProposalKind) -> Result<ProposalId> {
        let a = self.arc(arc)?;
        let now = self.clock;
        let snapshot = a.config.snapshot_voting.then(|| VotingSnapshot {
            tokens: a
                .members
                .iter()
                .map(|m| (*m, self.souls[m].balance_at_start_of(now)))
                .collect(),
            reputation: a
                .members
                .iter()
                .map(|m| (*m, self.reputation_score(*m).expect("members exist")))
                .collect(),
        });
        let electorate = a.members.len();
        let id = ProposalId(self.ids.next_proposal());
        self.proposals.insert(
            id,
            Proposal {
                id,
                arc,
                proposer,
                kind,
                snapshot_epoch: now,
                state: ProposalState::Voting,
                queued_until: None,
                electorate,
                snapshot,
                plural: BTreeMap::new(),
                epistemic: BTreeMap::new(),
                token_votes: BTreeMap::new(),
                outcome: None,
            },
        );
        Ok(id)
    }

    fn voting_proposal(&self, id: ProposalId) -> Result<(&Proposal, &Arc)> {
        let p = self.proposal(id)?;
        if p.state != ProposalState::Voting {
            return Err(CommonsError::NotVoting(id));
        }
        Ok((p, &self.arcs[&p.arc]))
    }

    /// Token voting power of `soul` on `p`: the snapshot value, or the live
    /// balance when snapshots are off.
    pub fn token_power(&self, p: &Proposal, soul: SoulId) -> Amount {
        match &p.snapshot {
            Some(s) => s.tokens.get(&soul).copied().unwrap_or(0),
            None => self.souls.get(&soul).map_or(0, |s| s.balance),
        }
    }

    /// Reputation of `soul` as seen by `p`. Non-members carry none.
    pub fn proposal_reputation(&self, p: &Proposal, soul: SoulId) -> Score {
        let zero = Ratio::from_integer(0);
        match &p.snapshot {
            Some(s) => s.reputation.get(&soul).copied().unwrap_or(zero),
            None if self.arcs[&p.arc].members.contains(&soul) => self.reputation_score(soul).unwrap_or(zero),
            None => zero,
        }
    }

    pub fn cast_plural_vote(&mut self, proposal: ProposalId, voter: SoulId, votes: i64) -> Result<u64> {
        let (p, arc) = self.voting_proposal(proposal)?;
        if arc.config.mode != GovernanceMode::Bicameral {
            return Err(CommonsError::WrongMode);
        }
        self.member_check(arc, voter)?;
        let round = arc.credit_round(self.clock);
        let budget = arc.config.voice_credits_per_round;
        let spent = arc.credits_spent(round, voter);
        let refund = p
            .plural
            .get(&voter)
            .filter(|b| b.round == round)
            .map_or(0, |b| b.credits_spent);
        let available = budget.saturating_sub(spent - refund);
        let cost = qv_cost(votes.unsigned_abs(), arc.config.qv_cost_mode);
        if cost > available {
            return Err(CommonsError::InsufficientCredits {
                needed: cost,
                remaining: available,
            });
        }
        let new_spent = spent - refund + cost;
        let arc_id = arc.id;
        self.arcs
            .get_mut(&arc_id)
            .expect("exists")
            .credits
            .entry(round)
            .or_default()
            .insert(voter, new_spent);
        self.proposals.get_mut(&proposal).expect("exists").plural.insert(
            voter,
            PluralBallot {
                votes,
                credits_spent: cost,
                round,
            },
        );
        self.record(Command::CastPluralVote { proposal, voter, votes });
        Ok(budget - new_spent)
    }

    /// Every soul whose delegation chain ends at `soul`, breadth first.
    pub fn transitive_delegators(&self, soul: SoulId) -> Vec<SoulId> {
        let mut reverse: BTreeMap<SoulId, Vec<SoulId>> = BTreeMap::new();
        for (from, to) in &self.delegations {
            reverse.entry(*to).or_default().push(*from);
        }
        let mut out = Vec::new();
        let mut queue = VecDeque::from([soul]);
        let mut seen = BTreeSet::from([soul]);
        while let Some(s) = queue.pop_front() {
            for d in reverse.get(&s).into_iter().flatten() {
                if seen.insert(*d) {
                    out.push(*d);
                    queue.push_back(*d);
                }
            }
        }
        out
    }

    pub fn cast_epistemic_vote(&mut self, proposal: ProposalId, voter: SoulId, support: bool) -> Result<Score> {
        let (p, arc) = self.voting_proposal(proposal)?;
        if arc.config.mode != GovernanceMode::Bicameral {
            return Err(CommonsError::WrongMode);
        }
        self.member_check(arc, voter)?;
        if self.delegations.contains_key(&voter) {
            return Err(CommonsError::DelegatedAway(voter));
        }
        let counted: BTreeSet<SoulId> = p.epistemic.values().flat_map(|b| b.carried.iter().copied()).collect();
        if counted.contains(&voter) {
            return Err(CommonsError::AlreadyVoted(voter));
        }
        let mut carried = vec![voter];
        carried.extend(
            self.transitive_delegators(voter)
                .into_iter()
                .filter(|d| !counted.contains(d)),
        );
        let weight: Score = carried.iter().map(|s| self.proposal_reputation(p, *s)).sum();
        if weight < Ratio::from_integer(arc.config.epistemic_min_reputation) {
            return Err(CommonsError::BelowThreshold);
        }
        self.proposals.get_mut(&proposal).expect("exists").epistemic.insert(
            voter,
            EpistemicBallot {
                support,
                weight,
                carried,
            },
        );
        self.record(Command::CastEpistemicVote {
            proposal,
            voter,
            support,
        });
        Ok(weight)
    }

    /// One-token-one-vote ballot; only in `TokenOnly` mode.
    pub fn cast_token_vote(&mut self, proposal: ProposalId, voter: SoulId, support: bool) -> Result<Amount> {
        let (p, arc) = self.voting_proposal(proposal)?;
        if arc.config.mode != GovernanceMode::TokenOnly {
            return Err(CommonsError::WrongMode);
        }
        self.member_check(arc, voter)?;
        if p.token_votes.contains_key(&voter) {
            return Err(CommonsError::AlreadyVoted(voter));
        }
        let weight = self.token_power(p, voter);
        if weight == 0 {
            return Err(CommonsError::NoVotingPower);
        }
        self.proposals
            .get_mut(&proposal)
            .expect("exists")
            .token_votes
            .insert(voter, TokenBallot { support, weight });
        self.record(Command::CastTokenVote {
            proposal,
            voter,
            support,
        });
        Ok(weight)
    }

    pub fn delegate(&mut self, delegator: SoulId, delegate: SoulId) -> Result<()> {
        self.soul(delegator)?;
        self.soul(delegate)?;
        if delegator == delegate {
            return Err(CommonsError::SelfDelegation);
        }
        let mut cur = delegate;
        while let Some(next) = self.delegations.get(&cur) {
            if *next == delegator {
                return Err(CommonsError::DelegationCycle);
            }
            cur = *next;
        }
        self.delegations.insert(delegator, delegate);
        self.record(Command::Delegate { delegator, delegate });
        Ok(())
    }

    pub fn undelegate(&mut self, delegator: SoulId) -> Result<()> {
        if self.delegations.remove(&delegator).is_none() {
            return Err(CommonsError::NotDelegating(delegator));
        }
        self.record(Command::Undelegate { delegator });
        Ok(())
    }

    /// Outcome `p` would get if tallied now with the ballots of `exclude`
    /// (and any reputation they carried) removed. Pure.
    pub fn evaluate_tally(&self, id: ProposalId, exclude: &BTreeSet<SoulId>) -> Result<TallyOutcome> {
        let p = self.proposal(id)?;
        let arc = &self.arcs[&p.arc];
        let cfg = &arc.config;
        let quorum = u128::from(cfg.plural_quorum.0);
        let outcome = match cfg.mode {
            GovernanceMode::TokenOnly => {
                let total: u128 = arc.members.iter().map(|m| u128::from(self.token_power(p, *m))).sum();
                let (mut yes, mut no) = (0u128, 0u128);
                for (v, b) in &p.token_votes {
                    if exclude.contains(v) {
                        continue;
                    }
                    if b.support {
                        yes += u128::from(b.weight);
                    } else {
                        no += u128::from(b.weight);
                    }
                }
                if total == 0 || (yes + no) * 10_000 < quorum * total {
                    TallyOutcome::Rejected(RejectReason::QuorumFail)
                } else if yes <= no {
                    TallyOutcome::Rejected(RejectReason::TokenOpposed)
                } else {
                    TallyOutcome::Approved
                }
            }
            GovernanceMode::Bicameral => {
                let ballots = p.plural.iter().filter(|(v, _)| !exclude.contains(v));
                let (count, net) = ballots.fold((0u128, 0i64), |(c, n), (_, b)| (c + 1, n + b.votes));
                let zero = Ratio::from_integer(0);
                let (mut yes, mut no) = (zero, zero);
                for (v, b) in &p.epistemic {
                    if exclude.contains(v) {
                        continue;
                    }
                    if b.support {
                        yes += b.weight;
                    } else {
                        no += b.weight;
                    }
                }
                let total_rep: Score = arc.members.iter().map(|m| self.proposal_reputation(p, *m)).sum();
                if count * 10_000 < quorum * p.electorate as u128 {
                    TallyOutcome::Rejected(RejectReason::QuorumFail)
                } else if net <= 0 {
                    TallyOutcome::Rejected(RejectReason::PluralOpposed)
                } else if yes <= no {
                    TallyOutcome::Rejected(RejectReason::EpistemicOpposed)
                } else if p.kind.is_constitutional_class() && no >= cfg.minority_veto_threshold.of(total_rep) {
                    TallyOutcome::Rejected(RejectReason::MinorityVeto)
                } else {
                    TallyOutcome::Approved
                }
            }
        };
        Ok(outcome)
    }

    /// Closes voting and decides. Approved proposals are queued behind the
    /// timelock.
    pub fn tally(&mut self, proposal: ProposalId) -> Result<TallyOutcome> {
        self.voting_proposal(proposal)?;
        let outcome = self.evaluate_tally(proposal, &BTreeSet::new())?;
        let now = self.clock;
        let p = self.proposals.get_mut(&proposal).expect("exists");
        let timelock = self.arcs[&p.arc].config.effective_timelock();
        p.outcome = Some(outcome);
        match outcome {
            TallyOutcome::Approved => {
                p.state = ProposalState::Queued;
                p.queued_until = Some(now + timelock);
            }
            TallyOutcome::Rejected(_) => p.state = ProposalState::Rejected,
        }
        self.record(Command::Tally { proposal });
        Ok(outcome)
    }

    pub fn founder_weight(&self, arc: ArcId) -> Result<Bps> {
        let a = self.arc(arc)?;
        Ok(founder_veto_weight(&a.config, self.clock - a.created_epoch))
    }

    /// m-of-n founder council veto over a queued proposal. While the founder
    /// weight `w` is positive the veto holds unless epistemic approval share
    /// reaches `0.5 + w/2`.
    pub fn council_veto(&mut self, proposal: ProposalId, signers: &BTreeSet<SoulId>) -> Result<()> {
        let p = self.proposal(proposal)?;
        if p.state != ProposalState::Queued {
            return Err(CommonsError::NotQueued(proposal));
        }
        let arc = &self.arcs[&p.arc];
        let w = founder_veto_weight(&arc.config, self.clock - arc.created_epoch);
        if w == Bps::ZERO {
            return Err(CommonsError::NotAuthorized("founder veto has expired".into()));
        }
        if let Some(s) = signers.iter().find(|s| !arc.founder_council.contains(s)) {
            return Err(CommonsError::NotAuthorized(format!(
                "{s} is not on the founder council"
            )));
        }
        let m = arc.config.veto_council_m_of_n.0;
        if signers.len() < m {
            return Err(CommonsError::InsufficientSigners {
                have: signers.len(),
                need: m,
            });
        }
        let (yes, no) = p.epistemic_totals();
        let cast = yes + no;
        if cast > Ratio::from_integer(0) {
            // yes / cast >= 1/2 + w/2  <=>  2·yes·10⁴ >= cast·(10⁴ + w)
            let lhs = yes * Ratio::from_integer(20_000);
            let rhs = cast * Ratio::from_integer(10_000 + u64::from(w.0));
            if lhs >= rhs {
                return Err(CommonsError::VetoOverridden);
            }
        }
        self.proposals.get_mut(&proposal).expect("exists").state = ProposalState::Vetoed;
        self.record(Command::CouncilVeto {
            proposal,
            signers: signers.clone(),
        });
        Ok(())
    }

    pub fn execute(&mut self, proposal: ProposalId) -> Result<EffectReceipt> {
        let p = self.proposal(proposal)?;
        if p.state != ProposalState::Queued {
            return Err(CommonsError::NotQueued(proposal));
        }
        let until = p.queued_until.expect("queued proposals have a release epoch");
        if self.clock < until {
            return Err(CommonsError::TimelockActive { until, now: self.clock });
        }
        let arc_id = p.arc;
        let effect = match p.kind.clone() {
            ProposalKind::TreasurySpend { to, amount } => {
                self.move_funds(Account::Arc(arc_id), to, amount).map_err(|e| match e {
                    CommonsError::InsufficientFree { needed, available, .. } => CommonsError::InsufficientTreasury {
                        arc: arc_id,
                        needed,
                        available,
                    },
                    other => other,
                })?;
                Effect::TreasuryPaid { to, amount }
            }
            ProposalKind::ParameterChange { change } | ProposalKind::Constitutional { change } => {
                let cfg = change.apply(&self.arcs[&arc_id].config)?;
                self.arcs.get_mut(&arc_id).expect("exists").config = cfg;
                Effect::ConfigChanged { change }
            }
            ProposalKind::SbtRevocation { sbt } => {
                self.revoke_inner(sbt)?;
                Effect::SbtRevoked { sbt }
            }
            ProposalKind::SbtReinstate { sbt } => {
                self.reinstate_inner(sbt)?;
                Effect::SbtReinstated { sbt }
            }
        };
        self.proposals.get_mut(&proposal).expect("exists").state = ProposalState::Executed;
        self.record(Command::Execute { proposal });
        Ok(EffectReceipt {
            proposal,
            epoch: self.clock,
            effect,
        })
    }

    fn fork_body(&self, arc: &Arc) -> ForkBody {
        let mut history = arc.inherited_history.clone();
        history.extend(
            self.proposals
                .values()
                .filter(|p| p.arc == arc.id)
                .map(|p| canonical::hex_digest(&p.digest())),
        );
        ForkBody {
            members: arc.members.clone(),
            founder_council: arc.founder_council.clone(),
            config: arc.config.clone(),
            treasury: arc.treasury,
            proposal_history: history,
            member_sbts: arc
                .members
                .iter()
                .map(|m| (*m, self.sbts_of(*m).map(|s| s.id).collect()))
                .collect(),
        }
    }

    /// Deterministic, self-verifying snapshot of an ARC.
    pub fn fork_export(&self, arc: ArcId) -> Result<Vec<u8>> {
        let a = self.arc(arc)?;
        Ok(ForkSnapshot::seal(arc, self.fork_body(a)).to_bytes())
    }

    /// Recreates an exported ARC under a fresh id. The imported treasury is
    /// newly issued supply.
    pub fn fork_import(&mut self, snapshot: &[u8]) -> Result<ArcId> {
        let snap = ForkSnapshot::open(snapshot)?;
        let body = snap.body;
        body.config.validate()?;
        if body.members.is_empty() {
            return Err(CommonsError::CorruptSnapshot("no members".into()));
        }
        for s in body.members.iter().chain(&body.founder_council) {
            self.soul(*s)?;
        }
        let minted = self.minted.checked_add(body.treasury).ok_or(CommonsError::Overflow)?;
        let id = ArcId(self.ids.next_arc());
        self.arcs.insert(
            id,
            Arc {
                id,
                members: body.members,
                treasury: body.treasury,
                config: body.config,
                founder_council: body.founder_council,
                created_epoch: self.clock,
                credits: BTreeMap::new(),
                inherited_history: body.proposal_history,
            },
        );
        self.minted = minted;
        let text = String::from_utf8(snapshot.to_vec()).expect("verified UTF-8");
        self.record(Command::ForkImport { snapshot: text });
        Ok(id)
    }
}
