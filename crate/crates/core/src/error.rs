use alloc::string::String;

/// Errors raised by the alignment core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("cosine distance is undefined for a zero vector")]
    ZeroVector,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("duplicate pair_id `{0}`")]
    DuplicatePairId(String),
    #[error("class `{0}` has a single record and cannot be split")]
    SingletonClass(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dataset has no class labels")]
    MissingLabels,
    #[error("need at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("negative table row {0} is empty")]
    EmptyNegativeRow(usize),
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("covariance matrix is singular; use a positive ridge")]
    SingularCovariance,
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },
}

impl Error {
    /// True for failures of the numerical kind (divergence, singular or degenerate fits).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. }
                | Error::SingularCovariance
                | Error::Degenerate(_)
                | Error::NonFinite(_)
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;
