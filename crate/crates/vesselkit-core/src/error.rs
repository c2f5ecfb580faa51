//! Error type shared by every module of the engine.

use thiserror::Error;

/// Failures raised by the numerical kernels and the persistence layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("spectra overlap: minimum eigenvalue gap {gap:.3e} is below {tol:.3e}")]
    SpectraOverlap { gap: f64, tol: f64 },

    #[error("sequence too short: need at least {needed} entries, got {got}")]
    InsufficientLength { needed: usize, got: usize },

    #[error("matrix is not symmetric within {tol:.3e} (asymmetry {asym:.3e})")]
    Asymmetric { asym: f64, tol: f64 },

    #[error("Hankel matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    HankelNotPd { index: usize, pivot: f64 },

    #[error("negative quadrature node {node:.6e}")]
    NegativeNode { node: f64 },

    #[error("series order exhausted: need order at least {needed}, got {got}")]
    OrderExhausted { needed: usize, got: usize },

    #[error("structure violation at moment {n}: imaginary residue {residue:.3e} exceeds {tol:.3e}")]
    StructureViolation { n: usize, residue: f64, tol: f64 },

    #[error("integrator failure: {0}")]
    IntegratorFailure(String),

    #[error("tau vanishes at x={x}, t={t}: |tau|={tau_abs:.3e} <= floor {floor:.3e}")]
    OmegaBoundary { x: f64, t: f64, tau_abs: f64, floor: f64 },

    #[error("lambda {re}+{im}i coincides with a pole of the transfer function")]
    PoleAtLambda { re: f64, im: f64 },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("unsupported parameters: {0}")]
    Unsupported(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
