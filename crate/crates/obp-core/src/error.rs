//! Error type shared by all engine modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("qubit count mismatch: {left} vs {right}")]
    QubitCountMismatch { left: usize, right: usize },

    #[error("qubit index {index} out of range for {n} qubits")]
    QubitOutOfRange { index: usize, n: usize },

    #[error("invalid Pauli character {0:?} (expected one of I, X, Y, Z)")]
    InvalidPauliChar(char),

    #[error("empty Pauli string")]
    EmptyPauli,

    #[error("rotation generator must not be the identity")]
    IdentityGenerator,

    #[error("duplicate qubit index {0} in gate")]
    DuplicateQubit(usize),

    #[error("negative truncation budget {0}")]
    NegativeBudget(f64),

    #[error("invalid budget schedule: {0}")]
    InvalidBudget(String),

    #[error("lattice error: {0}")]
    Lattice(String),

    #[error("trotter step count must be at least 1")]
    ZeroSteps,

    #[error("empty lightcone support")]
    EmptySupport,

    #[error("empty key set")]
    EmptyKeys,

    #[error("missing value for Pauli key {0}")]
    MissingKey(String),

    #[error("dense oracle limited to {limit} qubits, got {n}")]
    OracleTooLarge { n: usize, limit: usize },

    #[error("empty time window")]
    EmptyWindow,

    #[error("cluster error: {0}")]
    Cluster(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
