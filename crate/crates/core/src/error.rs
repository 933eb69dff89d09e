use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuiltError {
    #[error("invalid block design: {0}")]
    InvalidDesign(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate (constant) columns {columns:?} in block {block}")]
    DegenerateColumns { block: usize, columns: Vec<usize> },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("solver did not converge after {iterations} sweeps (last change {last_change:e}, duality gap {duality_gap:e})")]
    NonConvergence {
        iterations: usize,
        last_change: f64,
        duality_gap: f64,
    },

    #[error("block {block} overlaps previously processed blocks in {overlap} variables, fewer than rank {rank}")]
    UnderdeterminedMerge {
        block: usize,
        overlap: usize,
        rank: usize,
    },

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("every candidate failed: {0}")]
    AllCandidatesFailed(String),

    #[error("sweep failed: {failed} of {total} replicates failed in cell {cell}")]
    SweepFailed {
        cell: String,
        failed: usize,
        total: usize,
    },
}

pub type Result<T> = std::result::Result<T, QuiltError>;
