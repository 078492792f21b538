use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("point {value} lies outside the domain [{lo}, {hi}]")]
    Domain { value: f64, lo: f64, hi: f64 },

    #[error("ill-posed fit: {0}")]
    IllPosed(String),

    #[error("no admissible candidate: {0}")]
    Selection(String),

    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    #[error("variogram fit failed: {0}")]
    Fit(String),

    #[error("matrix is not positive definite (last jitter {jitter:e})")]
    Conditioning { jitter: f64 },

    #[error("singular design: {0}")]
    Rank(String),

    #[error("sites {0} and {1} share the same coordinates")]
    DuplicateSite(usize, usize),

    #[error("covariate arity mismatch: expected {expected}, got {got}")]
    Arity { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty selection: {0}")]
    Level(String),

    #[error("{dropped} of {total} bootstrap replicates failed")]
    TooManyDrops { dropped: usize, total: usize },

    #[error("{failed} of {total} simulation repetitions failed")]
    TooManyFailures { failed: usize, total: usize },
}
