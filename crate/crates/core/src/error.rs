use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value violates its invariant.
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },

    /// The plant state became non-finite.
    #[error("integration diverged at t = {t} s")]
    Diverged { t: f64 },

    #[error("time grids do not match: {0}")]
    GridMismatch(String),

    #[error("inconsistent calibration inputs: {0}")]
    Calibration(String),

    #[error("no start converged")]
    NoStartConverged,

    #[error("trajectory too short: {0}")]
    TooShort(String),

    #[error("csv: {0}")]
    Csv(String),

    #[error("scenario parse error: {0}")]
    Parse(String),

    /// An error traced back to a line of a scenario file.
    #[error("line {line}: {error}")]
    AtLine { line: usize, error: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// The error with any line annotation removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLine { error, .. } => error.root(),
            other => other,
        }
    }

    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
