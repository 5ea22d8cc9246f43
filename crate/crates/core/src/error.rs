use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report.
///
/// Variants are grouped by the stage that raises them. [`Error::is_usage`]
/// separates configuration/usage problems (exit code 2) from runtime
/// failures (exit code 1).
#[derive(Debug, Error)]
pub enum Error {
    // raster and image math
    #[error("image is empty")]
    EmptyImage,
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("selection mask selects no pixels")]
    EmptySelection,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("region {bbox:?} is outside a {width}x{height} image")]
    RegionOutOfBounds {
        bbox: (i64, i64, i64, i64),
        width: u32,
        height: u32,
    },
    #[error("unsupported channel count {0}")]
    UnsupportedChannels(u8),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    // vectors and selection
    #[error("vector has (near) zero norm")]
    ZeroVector,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("cell bank is empty")]
    EmptyBank,
    #[error("no bank record matches category {category:?} / type {cell_type}")]
    NoMatch { category: String, cell_type: String },
    #[error("bank record {0} has no embedding")]
    MissingEmbedding(u64),
    #[error("dataset has no annotated regions")]
    EmptyDataset,
    #[error("annotation {0} has no mask and no segmentation backend is configured")]
    MissingMask(usize),
    #[error("dataset has no regions eligible for composition")]
    NoRegions,

    // backends
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("generation rejected by backend: {0}")]
    GenerationRejected(String),
    #[error("backend returned status {status}: {message}")]
    BackendStatus { status: u16, message: String },
    #[error("verdict has no `Choice:` line: {0:?}")]
    UnparseableVerdict(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    // filtration
    #[error("unknown prompt template {0:?}")]
    UnknownTemplate(String),

    // data io
    #[error("parse error in {file}{}: {message}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Parse {
        file: PathBuf,
        line: Option<usize>,
        message: String,
    },
    #[error("schema error in field `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("ratio {0} must lie in (0, 1]")]
    InvalidRatio(f64),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec error: {0}")]
    Codec(String),

    // evaluation
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("run directory {0} is missing or incomplete")]
    MissingRun(PathBuf),
    #[error("{failed} of {total} entries failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn parse(file: impl Into<PathBuf>, line: Option<usize>, message: impl ToString) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            message: message.to_string(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping `Context` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for configuration and usage errors (CLI exit code 2).
    pub fn is_usage(&self) -> bool {
        matches!(
            self.root(),
            Error::Parse { .. } | Error::Schema { .. } | Error::Config(_) | Error::InvalidRatio(_)
        )
    }
}
