//! Pipelines behind the `vesselkit` command: potential to measure
//! (`realize`), measure to KdV field (`evolve`), invariant suites (`verify`),
//! end-to-end round trips (`roundtrip`) and bundled example measures
//! (`soliton`).
//!
//! Machine output goes to files written atomically; stdout carries a
//! human-readable table.

// Negated comparisons reject NaN together with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundled;
pub mod commands;
pub mod config;
pub mod report;

use thiserror::Error;
use vesselkit_core::Error as CoreError;

/// Failures of a command, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration or flags (exit 2).
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed or mismatched input file (exit 2).
    #[error("schema error: {0}")]
    Schema(String),
    /// Moment matrices lost their structured pattern (exit 2).
    #[error("{0}")]
    Structure(String),
    /// Unknown bundled measure (exit 2).
    #[error("unknown measure `{0}`; expected one of {names}", names = bundled::NAMES.join(", "))]
    UnknownName(String),
    /// File system failure (exit 3).
    #[error("I/O error: {0}")]
    Io(String),
    /// No grid point lies in the invertibility region (exit 4).
    #[error("invertibility region is empty on the requested grid")]
    OmegaEmpty,
    /// Numerical failure of the engine (exit 1).
    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Schema(_) | CliError::Structure(_) | CliError::UnknownName(_) => 2,
            CliError::Io(_) => 3,
            CliError::OmegaEmpty => 4,
            CliError::Numeric(_) => 1,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Schema(_) | CoreError::Json(_) => CliError::Schema(e.to_string()),
            CoreError::Io(_) => CliError::Io(e.to_string()),
            CoreError::StructureViolation { .. } => CliError::Structure(e.to_string()),
            CoreError::OrderExhausted { .. } | CoreError::InsufficientLength { .. } => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

/// Result of a command: the exit code (0 on success, 1 on a failed check).
pub type CmdResult = Result<i32, CliError>;
