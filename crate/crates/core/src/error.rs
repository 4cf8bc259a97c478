use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("inadmissible control: trajectory left the chart or diverged at t = {time}")]
    Inadmissible { time: f64 },

    #[error("numeric degeneracy: {0}")]
    Degenerate(String),

    #[error("Jacobian of the exponential map is singular (conjugate obstruction near t = {time})")]
    ConjugateObstruction { time: f64 },

    #[error("shooting failed after {iterations} iterations (residual {residual:e})")]
    ShootFailed { iterations: usize, residual: f64 },

    #[error("no converged candidate reached the target")]
    Unreachable,

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable category, used as CLI error tag.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::InvalidModel(_) => "model",
            Error::Inadmissible { .. } => "inadmissible",
            Error::Degenerate(_) => "degenerate",
            Error::ConjugateObstruction { .. } => "conjugate-obstruction",
            Error::ShootFailed { .. } => "shoot-failed",
            Error::Unreachable => "unreachable",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
