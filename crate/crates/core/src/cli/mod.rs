//! Scenario runner: JSON configs in, JSON reports and plot tables out.

mod config;
mod plot;
mod report;
mod run;

pub use config::{
    parse_config, ClassifyArgs, ConeClaimArgs, DiskArgs, EntryArgs, Experiment, OutputSpec, PipelineArgs, PlissArgs,
    ScenarioConfig, ShrinkArgs, SinkArgs, SplittingArgs, EXPERIMENT_KINDS,
};
pub use plot::emit_plotdata;
pub use report::{RunReport, Series, Stage, Toolkit, Verdict, SCHEMA_VERSION};
pub use run::{default_orbit_guess, run};

use crate::error::Error;

/// The report JSON Schema, as published in the repository.
pub const REPORT_SCHEMA: &str = include_str!("../../schema/report.schema.json");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown series {0}")]
    UnknownSeries(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numerical(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 3,
            _ => 2,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::BadParameters(m) => CliError::Config(m),
            Error::UnknownModel(m) => CliError::Config(format!("unknown model `{m}`")),
            Error::DimensionMismatch { expected, got } => {
                CliError::Config(format!("expected a point of dimension {expected}, got {got}"))
            }
            other => CliError::Numerical(other),
        }
    }
}
