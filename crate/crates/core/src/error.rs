use thiserror::Error;

/// Errors raised across the estimation stack.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("observability matrix over window {window} has rank {rank} < {n}")]
    UnobservableWindow { window: usize, rank: usize, n: usize },

    #[error("attack budget {budget} exceeds the {slots} available (step, sensor) slots")]
    BudgetTooLarge { budget: usize, slots: usize },

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("linear program hit the iteration limit ({0})")]
    IterationLimit(usize),

    #[error("matrix is rank deficient (rank {rank}, expected {expected})")]
    RankDeficient { rank: usize, expected: usize },

    #[error("need {needed} measurements, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("window bound undefined: a subset of support counts has max {max_support} <= 2q = {two_q}")]
    BoundUndefined { max_support: usize, two_q: usize },

    #[error("{subsets} column subsets exceed the exhaustive limit and sampling is disabled")]
    CombinatorialBlowup { subsets: u128 },

    #[error("ordering violation: {0}")]
    OrderingViolation(String),

    #[error("Riccati iteration did not converge in {0} steps")]
    RiccatiDivergence(usize),

    #[error("pair (A, B) is not controllable (controllability rank {rank} < {n})")]
    UncontrollablePair { rank: usize, n: usize },

    #[error("eigenvector matrix is ill conditioned (cond = {cond:.3e})")]
    IllConditionedAssignment { cond: f64 },

    #[error("innovation covariance is singular")]
    SingularInnovation,

    #[error("eigen decomposition failed: {0}")]
    Eigen(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
