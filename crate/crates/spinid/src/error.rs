use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid Pauli string: {0}")]
    InvalidPauliString(String),

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid grid spacing: {0}")]
    InvalidGrid(f64),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("matrix is not Hermitian (defect {defect:.3e})")]
    NotHermitian { defect: f64 },

    #[error("matrix is not skew-Hermitian (defect {defect:.3e})")]
    NotSkewHermitian { defect: f64 },

    #[error("{n} spins exceeds the cap of {cap} for this operation")]
    CapExceeded { n: usize, cap: usize },

    #[error("duplicate gyromagnetic ratios: canonical spin order is undefined")]
    DuplicateGamma,

    #[error("not a partner construction: {0}")]
    MismatchedPartner(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("scalar initial state: outputs are identically zero")]
    ScalarState,

    #[error("scalar-state data: unidentifiable")]
    ScalarStateData,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("malformed trace CSV: {0}")]
    Csv(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
