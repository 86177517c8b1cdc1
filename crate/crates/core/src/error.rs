use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoreError {
    #[error("invalid universe: {0}")]
    InvalidUniverse(String),

    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),

    #[error("degenerate complement: constraint covers every asset")]
    DegenerateComplement,

    #[error("infeasible configuration")]
    InfeasibleConfiguration,

    #[error("no feasible configuration found after {attempts} attempts")]
    NoFeasibleConfiguration { attempts: usize },

    #[error("invalid sub-action: {0}")]
    InvalidSubAction(String),

    #[error("point not in action space (max violation {violation:.3e})")]
    NotInActionSpace { violation: f64 },

    #[error("degenerate polytope; sampler unsupported (chebyshev radius {radius:.3e})")]
    DegeneratePolytope { radius: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("linear program failed: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
