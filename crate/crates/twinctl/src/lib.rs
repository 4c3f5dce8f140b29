//! Library behind the `twinctl` binary: configuration, saved calibrations,
//! run-log persistence, CSV ingest, reports and plots. The binary itself
//! only parses arguments and wires these pieces to the protocol runners.

pub mod calfile;
pub mod config;
pub mod ingest;
pub mod report;
pub mod runlog_io;
pub mod svg;

use thiserror::Error;
use twin_core::protocols::ProtocolError;

/// Everything the binary can fail with, mapped onto its exit codes:
/// 2 usage, 3 configuration or input files, 4 rig or protocol execution,
/// 5 analysis.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Calfile(#[from] calfile::CalfileError),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Runlog(#[from] runlog_io::RunlogIoError),
    #[error(transparent)]
    Report(#[from] report::ReportError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_)
            | CliError::Calfile(_)
            | CliError::Ingest(_)
            | CliError::Runlog(_)
            | CliError::Report(_) => 3,
            // analysis failures carry their own code so scripted pipelines
            // can tell bad data from a misbehaving rig
            CliError::Protocol(ProtocolError::Analysis(_)) => 5,
            CliError::Protocol(_) => 4,
        }
    }
}
