//! Scenario runner for the teleportation simulator: TOML scenarios, analytic
//! and sampled runs, error budgets, the improvement ladder, rate estimates and
//! CSV/JSON reports.

pub mod ladder;
pub mod rates;
pub mod report;
pub mod runner;
pub mod scenario;

use qnet_sim::photonic::LinkError;
use qnet_sim::protocol::ProtocolError;
use qnet_sim::spin_noise::SpinNoiseError;
use thiserror::Error;

pub use ladder::{improvement_ladder, LadderRow, Toggle};
pub use rates::{estimate_rate, LinkStage, PostStep, RateModel};
pub use report::{write_report, write_table};
pub use runner::{run, shot_rng, RunReport};
pub use scenario::{BudgetTarget, Output, RunMode, Scenario};

/// Version string embedded in every report.
pub const ARTIFACT_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("zero success probability")]
    ZeroSuccess,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    SpinNoise(#[from] SpinNoiseError),
    #[error("report output: {0}")]
    Output(String),
}
