//! Numerical laboratory for deep gated networks.

pub mod config;
pub mod convnet;
pub mod data;
pub mod experiments;
pub mod gates;
pub mod gram;
pub mod linalg;
pub mod network;
pub mod paths;
pub mod report;
pub mod theory;
pub mod train;

use thiserror::Error;

/// Any failure surfaced by a run.
#[derive(Debug, Error)]
pub enum Error {
    /// The request itself is wrong (bad key, unsupported combination).
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
    #[error(transparent)]
    Network(#[from] network::NetworkError),
    #[error(transparent)]
    Path(#[from] paths::PathError),
    #[error(transparent)]
    Gram(#[from] gram::GramError),
    #[error(transparent)]
    Train(#[from] train::TrainError),
    #[error(transparent)]
    Gate(#[from] gates::GateError),
    #[error(transparent)]
    Conv(#[from] convnet::ConvError),
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Report(#[from] report::ReportError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl Error {
    /// Usage errors map to exit status 2, everything else to 1.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Usage(_) | Error::Config(_))
    }
}
