use thiserror::Error;

/// Everything that can go wrong in this crate.
///
/// Variants split into two families: bad input (shape, balance, argument
/// ranges) and numerical failure (singular systems, indefinite covariances).
/// [`Error::is_numerical`] distinguishes them for callers that map errors to
/// process exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate panel: {0}")]
    DegeneratePanel(String),

    #[error("unbalanced panel: {0}")]
    UnbalancedPanel(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("search box does not contain the minimizer: {0}")]
    WidenBox(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the arithmetic itself (as opposed to rejected
    /// input). The CLI exits with code 2 for these and 1 for the rest.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient(_)
                | Error::SingularMatrix(_)
                | Error::SingularCovariance(_)
                | Error::Numerical(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
