use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("loss model has no data")]
    EmptyData,

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The proximal subproblem is only strongly convex for `eta < 1/L`.
    #[error("prox step too large: eta = {eta} but 1/L = {}", 1.0 / lipschitz)]
    ProxStepTooLarge { eta: f64, lipschitz: f64 },

    #[error("prox solver did not converge after {iterations} iterations (certified accuracy {accuracy:e})")]
    NonConvergence {
        iterations: usize,
        accuracy: f64,
        best: Vec<f64>,
    },

    #[error("local SGD diverged with learning rate lr = {lr}")]
    Divergence { lr: f64 },

    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: String, iteration: usize },

    #[error("stepsize configuration rejected: {constant} ≤ 0 (value {value})")]
    Rejected { constant: String, value: f64 },

    #[error("user {0} appears more than once in one aggregation")]
    DuplicateUser(usize),

    #[error(
        "requested model version {requested} but only versions {oldest}..={current} are retained"
    )]
    StaleRead {
        requested: usize,
        oldest: usize,
        current: usize,
    },

    #[error("trace does not carry per-round states; rerun with full-state tracing")]
    MissingStates,

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
