//! Scenario runner, configuration and the command-line utilities.

mod config;
mod report;
mod runner;
mod tools;

use thiserror::Error;

pub use config::{AggregatorConfig, RunConfig, TracesConfig, TransportConfig, TransportMode};
pub use report::{
    compute_metrics, energy_error_kwh, read_csv, write_csv, CsvRow, IntervalMetrics, RunMetrics,
    StepRecord, TransportStats, CSV_HEADER,
};
pub use runner::{build_inputs, go_id, run_scenario, Inputs, RunOutcome, COMMAND_DATASET, MEASUREMENT_DATASET};
pub use tools::{format_frame, goose_dump, verify_ledger, DumpSummary, LedgerStatus};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("input data: {0}")]
    Ingest(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Ingest(_) => 3,
            HarnessError::Invariant(_) => 4,
            HarnessError::Runtime(_) => 1,
        }
    }
}

macro_rules! map_error {
    ($variant:ident: $($t:ty),+) => {
        $(impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                HarnessError::$variant(e.to_string())
            }
        })+
    };
}

map_error!(Ingest: crate::plant::IngestError);
map_error!(Invariant: crate::plant::InvariantViolation, crate::model::ModelError);
map_error!(
    Runtime: std::io::Error,
    crate::acsi::AcsiError,
    crate::acsi::BindFailure,
    crate::broker::ServeError,
    crate::bridges::BridgeError,
    crate::bridges::MappingError,
    crate::hems::HemsError,
    crate::aggregator::AggregatorError,
    crate::aggregator::LedgerError
);
