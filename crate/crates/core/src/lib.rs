//! Deterministic state machine for a decentralized scholarly commons.
//!
//! A [`Commons`] holds token balances, soulbound credentials, ARC
//! governance, funding rounds and the IP market. Every successful command is
//! appended to a hash-chained [`EventLog`] that can be replayed into an
//! identical state.

pub mod alloc;
pub mod canonical;
pub mod error;
pub mod funding;
pub mod governance;
pub mod ids;
pub mod ipmarket;
pub mod ledger;
pub mod merkle;
pub mod reputation;
pub mod state;

pub use error::{CommonsError, Result};
pub use ids::{
    Account, Amount, ArcId, AssetId, Bps, Epoch, PoolId, ProgramId, ProposalId, RoundId, SbtId, ScheduleId, Score,
    SoulId, StakeId,
};
pub use ledger::{EventLog, EventRecord};
pub use state::{Command, Commons, CommonsConfig};
