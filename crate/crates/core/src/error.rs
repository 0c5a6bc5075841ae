use thiserror::Error;

/// Coarse error category, used by the CLI to pick an exit code and by the
/// C API to pick a status code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed or inconsistent configuration (exit code 2).
    Config,
    /// Malformed or inconsistent input data (exit code 3).
    Data,
    /// Numerical failure: non-convergence, singular systems, positivity
    /// violations (exit code 4).
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pair ({k}, {l}) for {players} players")]
    InvalidPair { k: usize, l: usize, players: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("comparison graph is disconnected: {0}")]
    Disconnected(String),

    #[error("comparison matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("positivity violation: {0}")]
    Positivity(String),

    #[error("identification failure: {0}")]
    Identification(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::InvalidPair { .. }
            | Error::NonFinite(_)
            | Error::Dimension(_)
            | Error::Data(_)
            | Error::Io(_) => ErrorKind::Data,
            Error::Disconnected(_)
            | Error::RankDeficient(_)
            | Error::NoConvergence { .. }
            | Error::Positivity(_)
            | Error::Identification(_) => ErrorKind::Numerical,
        }
    }

    /// Exit code used by the CLI: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
