use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point ({x}, {y}) lies outside the natural domain of {map}")]
    Domain { map: String, x: f64, y: f64 },

    #[error("singular point ({x}, {y}): {reason}")]
    Singularity { x: f64, y: f64, reason: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("cannot parse {what} from {input:?}: {reason}")]
    Parse {
        what: &'static str,
        input: String,
        reason: String,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("resolution too coarse: {0}")]
    Resolution(String),

    #[error("solver did not converge: {message} (best value {best_value})")]
    NonConvergence { message: String, best_value: f64 },

    #[error("pole at alpha = {0}: the closed-form bound is undefined")]
    Pole(f64),

    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn parse(what: &'static str, input: &str, reason: impl Into<String>) -> Self {
        Error::Parse {
            what,
            input: input.to_string(),
            reason: reason.into(),
        }
    }

    /// Exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_)
            | Error::Parse { .. }
            | Error::Domain { .. }
            | Error::Unsupported(_)
            | Error::Pole(_) => 2,
            Error::Singularity { .. }
            | Error::Inconclusive(_)
            | Error::Resolution(_)
            | Error::NonConvergence { .. }
            | Error::Io(_) => 3,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
