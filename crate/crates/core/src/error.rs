use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate design: the regressor is constant ({0})")]
    DegenerateDesign(&'static str),

    #[error("degenerate sample moments: {0}")]
    DegenerateMoments(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("singular information matrix: {0}")]
    SingularInformation(String),

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("data error at line {line}: {message}")]
    Data { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) => 2,
            Error::InsufficientData { .. } | Error::Data { .. } | Error::Io(_) => 3,
            Error::DegenerateDesign(_)
            | Error::DegenerateMoments(_)
            | Error::UndefinedCorrelation(_)
            | Error::SingularInformation(_)
            | Error::DegenerateVariance(_) => 4,
        }
    }

    /// True for errors that come from numerical degeneracy rather than bad input.
    pub fn is_numerical(&self) -> bool {
        self.exit_code() == 4
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
