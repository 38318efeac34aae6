use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("state {state} out of range (n_states = {n_states})")]
    StateOutOfRange { state: usize, n_states: usize },
    #[error("action {action} out of range (n_actions = {n_actions})")]
    ActionOutOfRange { action: usize, n_actions: usize },
    #[error("value iteration did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("matrix is not positive definite after damping {0}")]
    NotPositiveDefinite(f64),
    #[error("enumeration budget exceeded: {needed} trajectories > {budget}")]
    EnumerationBudget { needed: f64, budget: f64 },
    #[error("zero probability action in importance weight")]
    ZeroProbability,
    #[error("estimator provenance mismatch: {0}")]
    Provenance(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty probe set")]
    EmptyProbe,
    #[error("need at least 2 replications, got {0}")]
    TooFewReplications(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing constant: {0}")]
    MissingConstant(&'static str),
    #[error("incompatible policy family: {0}")]
    Incompatible(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
