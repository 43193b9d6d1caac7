//! Crate-wide error type.

/// Errors produced by fitting, evaluation, and model persistence.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("not enough points: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("component {component} lost its responsibility mass and could not be re-seeded")]
    DegenerateComponent { component: usize },

    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("singular design: every elemental start was rank-deficient")]
    SingularDesign,

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("unsupported error family: {0}")]
    UnsupportedFamily(String),

    #[error("cluster {cluster} received no points")]
    EmptyCell { cluster: usize },

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no candidate fit succeeded: {0}")]
    NoViableFit(String),

    #[error("model schema version {found} is newer than the supported version {supported}")]
    ModelVersionMismatch { found: u64, supported: u64 },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;
