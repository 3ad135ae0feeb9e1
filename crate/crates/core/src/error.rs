use thiserror::Error;

use crate::ids::{
    Account, Amount, ArcId, AssetId, Epoch, PoolId, ProgramId, ProposalId, RoundId, SbtId, ScheduleId, SoulId, StakeId,
};

/// Every way a command against the commons can fail.
///
/// A failed command leaves the state untouched and is not written to the
/// event log.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommonsError {
    // ledger
    #[error("unknown soul {0}")]
    UnknownSoul(SoulId),
    #[error("amount must be positive")]
    ZeroAmount,
    #[error("insufficient free balance in {account}: need {needed}, have {available}")]
    InsufficientFree {
        account: Account,
        needed: Amount,
        available: Amount,
    },
    #[error("cannot transfer to self")]
    SelfTransfer,
    #[error("bad vesting schedule: {0}")]
    BadSchedule(String),
    #[error("unknown vesting schedule {0}")]
    UnknownSchedule(ScheduleId),
    #[error("epoch advance must be at least 1")]
    ZeroAdvance,
    #[error("arithmetic overflow")]
    Overflow,

    // reputation
    #[error("unknown arc {0}")]
    UnknownArc(ArcId),
    #[error("unknown sbt {0}")]
    UnknownSbt(SbtId),
    #[error("unknown credential category {0:?}")]
    UnknownCategory(String),
    #[error("{0} is soulbound and cannot be transferred")]
    NonTransferable(SbtId),
    #[error("not authorized: {0}")]
    NotAuthorized(String),
    #[error("{0} is already revoked")]
    AlreadyRevoked(SbtId),
    #[error("{0} is not revoked")]
    NotRevoked(SbtId),
    #[error("{0} has already used its appeal")]
    AppealExhausted(SbtId),
    #[error("insufficient credentials: have {have}, need {need}")]
    InsufficientCredentials { have: usize, need: usize },
    #[error("{0} is already staked")]
    AlreadyStaked(SbtId),
    #[error("stake matures at epoch {until}, now {now}")]
    NotMature { until: Epoch, now: Epoch },
    #[error("{soul} does not own {sbt}")]
    NotOwner { soul: SoulId, sbt: SbtId },
    #[error("unknown stake {0}")]
    UnknownStake(StakeId),
    #[error("{0} is not active")]
    SbtInactive(SbtId),
    #[error("stake end epoch {until} must be after now ({now})")]
    BadStakeTerm { until: Epoch, now: Epoch },

    // governance
    #[error("{soul} is not a member of {arc}")]
    NotMember { soul: SoulId, arc: ArcId },
    #[error("unknown proposal {0}")]
    UnknownProposal(ProposalId),
    #[error("insufficient voice credits: need {needed}, remaining {remaining}")]
    InsufficientCredits { needed: u64, remaining: u64 },
    #[error("{0} is not in voting")]
    NotVoting(ProposalId),
    #[error("voting weight below the epistemic threshold")]
    BelowThreshold,
    #[error("a soul cannot delegate to itself")]
    SelfDelegation,
    #[error("delegation would create a cycle")]
    DelegationCycle,
    #[error("{0} has no active delegation")]
    NotDelegating(SoulId),
    #[error("{0} has delegated its vote away")]
    DelegatedAway(SoulId),
    #[error("{0} has already voted in this chamber")]
    AlreadyVoted(SoulId),
    #[error("{0} is not queued")]
    NotQueued(ProposalId),
    #[error("insufficient council signers: have {have}, need {need}")]
    InsufficientSigners { have: usize, need: usize },
    #[error("timelock active until epoch {until}, now {now}")]
    TimelockActive { until: Epoch, now: Epoch },
    #[error("veto overridden by epistemic supermajority")]
    VetoOverridden,
    #[error("no voting power at the snapshot")]
    NoVotingPower,
    #[error("operation not available in this governance mode")]
    WrongMode,
    #[error("corrupt fork snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("bad governance config: {0}")]
    BadConfig(String),
    #[error("insufficient treasury in {arc}: need {needed}, have {available}")]
    InsufficientTreasury {
        arc: ArcId,
        needed: Amount,
        available: Amount,
    },

    // funding
    #[error("a round needs at least one project")]
    EmptyProjects,
    #[error("duplicate project {0:?}")]
    DuplicateProject(String),
    #[error("unknown project {0:?}")]
    UnknownProject(String),
    #[error("unknown round {0}")]
    UnknownRound(RoundId),
    #[error("this round requires a reputation stake")]
    StakeRequired,
    #[error("{0} is closed")]
    RoundClosed(RoundId),
    #[error("no contributions in {0}")]
    NoContributions(RoundId),
    #[error("{0} is already settled")]
    AlreadySettled(RoundId),
    #[error("unknown program {0}")]
    UnknownProgram(ProgramId),
    #[error("unknown milestone {index} in {program}")]
    UnknownMilestone { program: ProgramId, index: usize },
    #[error("milestone {0} released out of order")]
    OutOfOrder(usize),
    #[error("milestone {0} has not been reported")]
    NotReported(usize),
    #[error("program budget exceeded: need {needed}, remaining {remaining}")]
    BudgetExceeded { needed: Amount, remaining: Amount },
    #[error("milestone {0} is not pending")]
    MilestoneNotPending(usize),
    #[error("contribution CSV: {0}")]
    BadCsv(String),

    // ip market
    #[error("royalty split sums to {0} basis points, expected 10000")]
    BadSplit(u64),
    #[error("unknown asset {0}")]
    UnknownAsset(AssetId),
    #[error("open-access license on {0} is permanent")]
    OpenAccessPermanent(AssetId),
    #[error("{0} already has an exclusive license")]
    ExclusiveConflict(AssetId),
    #[error("{0} is already fractionalized")]
    AlreadyFractionalized(AssetId),
    #[error("unknown pool {0}")]
    UnknownPool(PoolId),
    #[error("insufficient IPT units: have {have}, need {need}")]
    InsufficientUnits { have: u64, need: u64 },
    #[error("curve reserve underflow")]
    ReserveUnderflow,
    #[error("royalty revenue must be positive")]
    ZeroRevenue,
    #[error("bad bonding curve: {0}")]
    BadCurve(String),
    #[error("IPT supply cap {cap} would be exceeded")]
    SupplyCap { cap: u64 },

    // event log
    #[error("corrupt event log at seq {seq}: {reason}")]
    CorruptLog { seq: u64, reason: String },
}

pub type Result<T, E = CommonsError> = std::result::Result<T, E>;
