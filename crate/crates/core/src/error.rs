use thiserror::Error;

/// Errors raised by ingestion, fitting and tuning.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdspError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unbalanced panel: id `{id}` has {found} rows, expected {expected}")]
    UnbalancedPanel {
        id: String,
        found: usize,
        expected: usize,
    },
    #[error("non-finite value at row {row}, column `{column}`")]
    NonFiniteValue { row: usize, column: String },
    #[error("malformed input at row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate correlation: {0}")]
    DegenerateCorrelation(String),
    #[error("residuals have zero variance")]
    ZeroVariance,
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("degenerate degrees of freedom: df = {df} with {n_obs} observations")]
    DegenerateDf { df: usize, n_obs: usize },
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("io error: {0}")]
    Io(String),
}

impl MdspError {
    /// Stable machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            MdspError::MissingColumn(_) => "MissingColumn",
            MdspError::UnbalancedPanel { .. } => "UnbalancedPanel",
            MdspError::NonFiniteValue { .. } => "NonFiniteValue",
            MdspError::Parse { .. } => "Parse",
            MdspError::InvalidDataset(_) => "InvalidDataset",
            MdspError::InvalidConfig(_) => "InvalidConfig",
            MdspError::DegenerateCorrelation(_) => "DegenerateCorrelation",
            MdspError::ZeroVariance => "ZeroVariance",
            MdspError::SingularSystem(_) => "SingularSystem",
            MdspError::DegenerateDf { .. } => "DegenerateDf",
            MdspError::NoConvergence(_) => "NoConvergence",
            MdspError::ShapeMismatch(_) => "ShapeMismatch",
            MdspError::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for MdspError {
    fn from(e: std::io::Error) -> Self {
        MdspError::Io(e.to_string())
    }
}

impl From<csv::Error> for MdspError {
    fn from(e: csv::Error) -> Self {
        let row = e
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or_default();
        MdspError::Parse {
            row,
            message: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, MdspError>;
