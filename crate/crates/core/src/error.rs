//! Crate-wide error type.
//!
//! Variants are grouped by how a caller should react: `Parse` means the input
//! file or flag text is malformed, `Infeasible`/`Domain` mean the design or
//! parameter values cannot produce a valid plan, `Degenerate`/`Undersized`
//! mean the data cannot support the requested fit, `Blinding` means an input
//! would leak treatment assignment into a blinded step, and `Search` means an
//! iterative procedure gave up.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument is outside its documented domain.
    #[error("invalid parameter: {0}")]
    Domain(String),

    /// The design is internally inconsistent or cannot be sized.
    #[error("infeasible design: {0}")]
    Infeasible(String),

    /// The data are rank-deficient or otherwise unusable for estimation.
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// Too few rows to estimate the requested model.
    #[error("insufficient data: {0}")]
    Undersized(String),

    /// Malformed input text (CSV, JSON, or flag values).
    #[error("parse error: {0}")]
    Parse(String),

    /// Input would reveal treatment assignment to a blinded procedure.
    #[error("blinding violation: {0}")]
    Blinding(String),

    /// An iterative search exhausted its budget without converging.
    #[error("search failure: {0}")]
    Search(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
