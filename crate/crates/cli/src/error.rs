use std::path::PathBuf;

use overtone_core::analytics::AnalyticsError;
use overtone_core::experiment::ExperimentError;
use overtone_core::{HamiltonianError, OracleError, SpinError, ZfsError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config file contents or parameter values.
    #[error("configuration error: {0}")]
    Config(String),
    /// The computation left its range of validity (perturbative guard,
    /// degenerate labels, under-resolved steps, nothing to fit).
    #[error("numeric validity error: {0}")]
    Numeric(String),
    /// Unknown flag or malformed command line; clap has already printed usage.
    #[error("usage error")]
    Usage,
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Config(_) | CliError::Usage => 2,
            CliError::Numeric(_) => 3,
            CliError::Validation(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<ZfsError> for CliError {
    fn from(e: ZfsError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SpinError> for CliError {
    fn from(e: SpinError) -> Self {
        match e {
            SpinError::BadTimeGrid => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<HamiltonianError> for CliError {
    fn from(e: HamiltonianError) -> Self {
        match e {
            HamiltonianError::Zfs(z) => z.into(),
            HamiltonianError::Perturbation { .. } => CliError::Numeric(e.to_string()),
            HamiltonianError::Chi(_) | HamiltonianError::Field(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<AnalyticsError> for CliError {
    fn from(e: AnalyticsError) -> Self {
        match e {
            AnalyticsError::Hamiltonian(h) => h.into(),
            AnalyticsError::Zfs(z) => z.into(),
            AnalyticsError::NoResonance => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Spin(s) => s.into(),
            OracleError::Hamiltonian(h) => h.into(),
            OracleError::Analytics(a) => a.into(),
            OracleError::NoOscillation | OracleError::ShortTrace(_) | OracleError::EmptyComparison => {
                CliError::Numeric(e.to_string())
            }
            OracleError::EmptyGrid | OracleError::TooFewBins(_) | OracleError::Rabi(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Spin(s) => s.into(),
            ExperimentError::Hamiltonian(h) => h.into(),
            ExperimentError::Oracle(o) => o.into(),
            ExperimentError::SweepTooFast { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}
