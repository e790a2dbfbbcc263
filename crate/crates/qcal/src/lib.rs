//! Configuration, run orchestration and file formats on top of `qcal-core`.
//!
//! * [`config`]: the TOML run configuration and its hash.
//! * [`calib`]: Bayesian calibration loop, estimator sweeps and the resource
//!   comparison against an exhaustive search.
//! * [`io`]: CSV, JSON, JSON-lines and binary writers with provenance headers.
//! * [`track`]: single-state tracking runs and their statistics.
//! * [`plots`]: plot-ready CSVs per figure and a plotting script stub.
//! * [`oracles`]: quick self-checks of the numerics against closed forms.
//! * [`cli`]: the `qcal` command line.

// Negated comparisons reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calib;
pub mod cli;
pub mod config;
pub mod io;
pub mod oracles;
pub mod plots;
pub mod track;

pub use config::Config;

/// Failure classes, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum QcalError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Assert(String),
}

impl QcalError {
    pub fn exit_code(&self) -> u8 {
        match self {
            QcalError::Config(_) => 1,
            QcalError::Runtime(_) => 2,
            QcalError::Assert(_) => 3,
        }
    }
}

impl From<qcal_core::Error> for QcalError {
    fn from(e: qcal_core::Error) -> Self {
        match e {
            qcal_core::Error::InvalidParam { .. } => QcalError::Config(e.to_string()),
            other => QcalError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for QcalError {
    fn from(e: std::io::Error) -> Self {
        QcalError::Runtime(format!("i/o error: {e}"))
    }
}

impl From<csv::Error> for QcalError {
    fn from(e: csv::Error) -> Self {
        QcalError::Runtime(format!("csv error: {e}"))
    }
}

impl From<serde_json::Error> for QcalError {
    fn from(e: serde_json::Error) -> Self {
        QcalError::Runtime(format!("json error: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, QcalError>;
