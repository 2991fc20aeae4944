use thiserror::Error;

/// Error type shared by all modules of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Operands have incompatible dimensions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A matrix required to be Hermitian is not, within tolerance.
    #[error("matrix not Hermitian within {tol:e} (deviation {deviation:e})")]
    NotHermitian { tol: f64, deviation: f64 },
    /// A numerical procedure failed (NaN, divergence, no convergence).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
