use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("truncated file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("feature dimension is zero")]
    DimZero,
    #[error("sequence has no frames")]
    EmptySequence,
    #[error("row {row} has L2 norm {norm}, expected 1 within 1e-4")]
    InvalidNorm { row: usize, norm: f64 },
    #[error("sequence length {len} exceeds the maximum {max}")]
    TooLong { len: usize, max: usize },
    #[error("line {line}: malformed json: {message}")]
    MalformedJson { line: usize, message: String },
    #[error("line {line}: {reason}")]
    InvariantViolation { line: usize, reason: String },
    #[error("invalid segment box: {0}")]
    InvalidBox(String),
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error("temporal encoding needs an even dimension, got {0}")]
    OddDimension(usize),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("weight shape mismatch: {0}")]
    WeightShapeMismatch(String),
    #[error("attention normalizer vanished at row {0}")]
    ZeroDenominator(usize),
    #[error("frame {index} of the {side} sequence has zero norm")]
    ZeroVector { side: &'static str, index: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("resize target must be at least 1x1, got {0}x{1}")]
    EmptyTarget(usize, usize),
    #[error("expected a {expected} similarity matrix, got {found}")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },
    #[error("length mismatch: {0} predictions vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("dataset contains no pairs")]
    EmptyDataset,
    #[error("copy plan overlaps on the {0} axis")]
    OverlapInPlan(&'static str),
    #[error("copy does not fit: {0}")]
    DoesNotFit(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::BadMagic { .. } => "BadMagic",
            Error::TruncatedFile { .. } => "TruncatedFile",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::DimZero => "DimZero",
            Error::EmptySequence => "EmptySequence",
            Error::InvalidNorm { .. } => "InvalidNorm",
            Error::TooLong { .. } => "TooLong",
            Error::MalformedJson { .. } => "MalformedJson",
            Error::InvariantViolation { .. } => "InvariantViolation",
            Error::InvalidBox(_) => "InvalidBox",
            Error::InvalidAnnotation(_) => "InvalidAnnotation",
            Error::OddDimension(_) => "OddDimension",
            Error::DimMismatch(_) => "DimMismatch",
            Error::WeightShapeMismatch(_) => "WeightShapeMismatch",
            Error::ZeroDenominator(_) => "ZeroDenominator",
            Error::ZeroVector { .. } => "ZeroVector",
            Error::InvalidParam(_) => "InvalidParam",
            Error::EmptyTarget(..) => "EmptyTarget",
            Error::WrongKind { .. } => "WrongKind",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::EmptyDataset => "EmptyDataset",
            Error::OverlapInPlan(_) => "OverlapInPlan",
            Error::DoesNotFit(_) => "DoesNotFit",
        }
    }
}
