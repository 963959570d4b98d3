use thiserror::Error;

/// Errors raised across the AEG pipeline.
///
/// Variant names double as the stable machine-readable codes returned by
/// the HTTP service (see [`Error::code`]).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("covariance matrix is not positive definite")]
    DegenerateCovariance,
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("clip {clip_id} has {frames} frames, fewer than the window of {window}")]
    ClipTooShort {
        clip_id: String,
        frames: usize,
        window: usize,
    },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no topic posterior for clip {0}")]
    MissingPosterior(String),
    #[error("every affective component was removed during learning")]
    ModelCollapsed,
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("topic posterior has no mass on surviving topics")]
    NoSupportingTopics,
    #[error("duplicate clip id {0}")]
    DuplicateClip(String),
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("list mismatch: {0}")]
    ListMismatch(String),
    #[error("ground truth has zero variance")]
    DegenerateTruth,
    #[error("cutoff {cutoff} exceeds list length {len}")]
    InvalidCutoff { cutoff: usize, len: usize },
    #[error("invalid count: {0}")]
    InvalidCount(String),
    #[error("query kind not accepted here: {0}")]
    InvalidQueryKind(String),
    #[error("unsupported bundle version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Stable error code, identical to the variant name.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DegenerateCovariance => "DegenerateCovariance",
            Error::InvalidMatrix(_) => "InvalidMatrix",
            Error::EmptyInput(_) => "EmptyInput",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::ClipTooShort { .. } => "ClipTooShort",
            Error::InsufficientData(_) => "InsufficientData",
            Error::MissingPosterior(_) => "MissingPosterior",
            Error::ModelCollapsed => "ModelCollapsed",
            Error::ModelMismatch(_) => "ModelMismatch",
            Error::NoSupportingTopics => "NoSupportingTopics",
            Error::DuplicateClip(_) => "DuplicateClip",
            Error::ZeroVector => "ZeroVector",
            Error::ListMismatch(_) => "ListMismatch",
            Error::DegenerateTruth => "DegenerateTruth",
            Error::InvalidCutoff { .. } => "InvalidCutoff",
            Error::InvalidCount(_) => "InvalidCount",
            Error::InvalidQueryKind(_) => "InvalidQueryKind",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::CorruptBundle(_) => "CorruptBundle",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::InvalidInput(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
