use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{family} parameter {theta} is outside the family domain")]
    ParamDomain { family: &'static str, theta: f64 },

    #[error("Kendall tau {tau} is not attainable by the {family} family")]
    UnattainableTau { family: &'static str, tau: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("Cholesky factorisation failed even with jitter {jitter:e}; the inducing set is numerically degenerate")]
    Cholesky { jitter: f64 },

    #[error("non-finite {what} at observation {obs}, draw {draw}")]
    NonFinite {
        what: &'static str,
        obs: usize,
        draw: usize,
    },

    #[error("degenerate sampler state: {0}")]
    DegenerateState(String),

    #[error("invalid dataset: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed CSV at line {line}: {msg}")]
    Csv { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by numerics rather than by inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Cholesky { .. } | Error::NonFinite { .. } | Error::DegenerateState(_)
        )
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::Csv {
            line,
            msg: e.to_string(),
        }
    }
}
