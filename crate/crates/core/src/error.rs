use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid channel schema: {0}")]
    InvalidSchema(String),
    #[error("series `{id}`: {reason}")]
    SchemaMismatch { id: String, reason: String },
    #[error("series `{id}` has a non-finite value at row {row}, column {column}")]
    NonFinite { id: String, row: usize, column: usize },
    #[error("duplicate series id `{0}`")]
    DuplicateSeries(String),
    #[error("constructs table references unknown series id `{0}`")]
    UnknownSeries(String),
    #[error("the dataset holds no series")]
    EmptyDataset,
    #[error("series `{id}` has {len} frames but lag {lag} needs at least {need}")]
    InsufficientData { id: String, len: usize, lag: usize, need: usize },
    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("construct `{0}` has no variance and cannot be evaluated")]
    ConstantConstruct(String),
    #[error("unstable autoregressive state {state}: spectral radius {radius}")]
    UnstableState { state: usize, radius: f64 },
}
