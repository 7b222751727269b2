use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent; `field` names it.
    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("parameter error: {0}")]
    Parameter(String),

    /// The grid cannot carry the requested group action exactly.
    #[error("symmetry-compatibility error: {0}")]
    SymmetryCompatibility(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("unsupported domain: {0}")]
    UnsupportedDomain(String),

    /// Mountain-pass geometry could not be established for the model.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Non-finite energy during a solve. `last_good` holds the last finite iterate.
    #[error("numerical failure: {message}")]
    Numerical { message: String, last_good: Vec<f64> },

    #[error("hypothesis violation: {0}")]
    HypothesisViolation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag for diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::Parameter(_) => "parameter",
            Error::SymmetryCompatibility(_) => "symmetry-compatibility",
            Error::Usage(_) => "usage",
            Error::UnsupportedDomain(_) => "unsupported-domain",
            Error::Geometry(_) => "geometry",
            Error::Numerical { .. } => "numerical-failure",
            Error::HypothesisViolation(_) => "hypothesis-violation",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }
}
