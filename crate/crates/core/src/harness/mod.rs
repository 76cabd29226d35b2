//! Scenario configuration, Monte-Carlo driver, aggregation and file output.

use std::path::PathBuf;

use thiserror::Error;

use crate::attacker::AttackerError;
use crate::defender::DefenderError;
use crate::geometry::GeometryError;
use crate::phy::PhyError;

pub mod config;
pub mod experiment;
pub mod output;
pub mod scenarios;
pub mod summary;

pub use config::{PathCountSpec, ScenarioConfig};
pub use experiment::{
    precoder_at, run_experiment, run_single, ApObservation, PolicyOutcome, RunOptions, TrialRecord,
};
pub use output::emit_outputs;
pub use summary::{summarize, Summary};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    Attacker(#[from] AttackerError),
    #[error(transparent)]
    Defender(#[from] DefenderError),
}

impl HarnessError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Io { .. } => "io",
            HarnessError::Csv { .. } => "csv",
            HarnessError::Geometry(_) => "geometry",
            HarnessError::Phy(_) => "phy",
            HarnessError::Attacker(_) => "attacker",
            HarnessError::Defender(_) => "defender",
        }
    }
}
