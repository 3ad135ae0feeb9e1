//! Deterministic scenario runner for the scholarly commons.
//!
//! A [`Scenario`] declares agents, an ARC and a timed script. [`run`] plays
//! it against a fresh [`commons_core::Commons`], checks every global
//! invariant after each step and returns a [`SimReport`] whose content hash
//! depends only on the scenario and the seed.

pub mod attack;
pub mod bundled;
pub mod metrics;
pub mod report;
pub mod runner;
pub mod scenario;

pub use attack::{run_attack_flashloan, AttackOutcome, AttackReport, BlockReason, FlashLoanParams};
pub use metrics::{gini, GiniError};
pub use report::{compare, ReportDiff, SimReport};
pub use runner::{run, RunOptions, SimRun};
pub use scenario::{load_scenario, Diagnostic, LoadError, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("{0}")]
    Load(#[from] LoadError),
    #[error("invariant violated at {location}: {invariant}")]
    InvariantViolation { location: String, invariant: String },
    #[error("scenario setup failed: {0}")]
    Setup(String),
    #[error("reports are for different scenarios: {a:?} vs {b:?}")]
    ScenarioMismatch { a: String, b: String },
}
