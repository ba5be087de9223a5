use thiserror::Error;

/// Why a UIO cannot be built from a given kernel representation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoUioCause {
    /// The future-state block of the annihilator does not have full column rank.
    #[error("V_f is rank deficient: rank {rank} < n = {n}")]
    VfRankDeficient { rank: usize, n: usize },
    /// The reduced pair (A_bar, C_bar) has an unobservable mode outside the open unit disc.
    #[error("(A_bar, C_bar) is not detectable: unobservable mode(s) at {modes:?}")]
    NotDetectable { modes: Vec<(f64, f64)> },
    /// The record does not excite `(X_p, U_p, U_f)`, so the data assumption fails.
    #[error("data not exciting: rank (X_p, U_p, U_f) = {rank} < {target}")]
    InsufficientExcitation { rank: usize, target: usize },
}

#[derive(Debug, Error)]
pub enum UioError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid model: {}", .0.join("; "))]
    InvalidModel(Vec<String>),

    #[error("matrix is column rank deficient: rank {rank} < {cols} columns")]
    ColumnRankDeficient { rank: usize, cols: usize },

    #[error("pair is not detectable")]
    NotDetectable,

    #[error("pair is not observable: observability rank {rank} < {n}")]
    NotObservable { rank: usize, n: usize },

    #[error("pole placement failed: {0}")]
    PlacementFailed(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("no UIO exists: {0}")]
    NoUio(NoUioCause),

    #[error("historical data carries no disturbance record")]
    MissingDisturbanceRecord,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, UioError>;
