use thiserror::Error;

/// Errors shared across the crate. Every refusal carries enough context to
/// fix the configuration without re-running.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("mollifier profile is not normalizable: {0}")]
    NotNormalizable(String),

    #[error("dimension mismatch: expected d={expected}, got d={got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(
        "memory estimate {required_bytes} B exceeds budget {budget_bytes} B; \
         raise the budget or coarsen the lattice"
    )]
    BudgetExceeded { required_bytes: u128, budget_bytes: u128 },

    #[error(
        "mollifier support overflows the box at slab {slab}: position {position:?} \
         requires half-width L >= {required_half_width}, have {half_width}"
    )]
    SupportOverflow {
        slab: usize,
        position: Vec<f64>,
        required_half_width: f64,
        half_width: f64,
    },

    #[error("path exits the safe region at t={time}: position {position:?} (L={half_width})")]
    PathExitedBox { time: f64, position: Vec<f64>, half_width: f64 },

    #[error("occupation integral diverges for d={d} (recurrent dimension, need d >= 3)")]
    DivergentOccupation { d: usize },

    #[error("integral of g^-2 diverges for this weight function")]
    DivergentWeight,

    #[error("small-ball resolution exhausted: {0}")]
    ResolutionExhausted(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
