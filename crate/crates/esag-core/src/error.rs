//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the ESAG library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum EsagError {
    /// The ambient dimension is below 3; the ESAG shape space is empty for d = 2.
    #[error("ambient dimension must be at least 3, got {0}")]
    DimensionTooSmall(usize),

    /// A mean direction with (numerically) zero norm was supplied.
    #[error("degenerate mean direction: |mu| = {0:e} is too small")]
    DegenerateMean(f64),

    /// Vector or matrix lengths do not match the ambient dimension.
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A vector that must lie on the unit sphere does not.
    #[error("not a unit vector: |y| = {0} deviates from 1 beyond tolerance")]
    NotUnitNorm(f64),

    /// A covariate column has zero range and cannot be standardized.
    #[error("covariate column {0} is constant; zero-range columns cannot be standardized")]
    ZeroRangeColumn(usize),

    /// The data do not support the requested operation.
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// A fitted mean norm fell below the usable floor.
    #[error("degenerate fit: |mu| below floor at observation {0}")]
    DegenerateFit(usize),

    /// Two coefficient restrictions that must nest do not.
    #[error("null specification is not strictly nested in the alternative")]
    NotNested,

    /// A matrix violates a determinant contract.
    #[error("determinant contract violated: det = {0}, expected 1 within tolerance")]
    DeterminantViolation(f64),

    /// Any other argument violation.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, EsagError>;
