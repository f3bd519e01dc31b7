//! Command-line front end for `scorefilt`: configuration, data ingestion,
//! subcommands and report writers.

pub mod commands;
pub mod config;
pub mod ingest;
pub mod output;

use std::fmt;

/// A failed run, classified by process exit status.
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    Config(String),
    Estimation(String),
    Divergence(String),
    Other(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Estimation(_) => 3,
            Failure::Divergence(_) => 4,
            Failure::Other(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Estimation(m) => write!(f, "estimation failed: {m}"),
            Failure::Divergence(m) => write!(f, "divergence: {m}"),
            Failure::Other(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for Failure {}

impl From<scorefilt::Error> for Failure {
    fn from(e: scorefilt::Error) -> Self {
        use scorefilt::Error as E;
        match e {
            E::Input(_) | E::Domain(_) | E::Unsupported(_) => Failure::Config(e.to_string()),
            E::EstimationFailed(_) => Failure::Estimation(e.to_string()),
            E::Divergence(_) => Failure::Divergence(e.to_string()),
            _ => Failure::Other(e.to_string()),
        }
    }
}
