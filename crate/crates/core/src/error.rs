use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed header, expected `sample_rate_hz=<float>` (got {found:?})")]
    MalformedHeader { line: usize, found: String },

    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: cannot parse field {field} ({value:?})")]
    BadNumber {
        line: usize,
        field: usize,
        value: String,
    },

    #[error("line {line}: non-finite sample")]
    NonFiniteSample { line: usize },

    #[error("invalid sample rate {0} Hz")]
    InvalidSampleRate(f64),

    #[error("format error: {0}")]
    Format(String),

    #[error("image dimensions {h}x{w} overflow")]
    DimensionOverflow { h: u64, w: u64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("filter design: {0}")]
    FilterDesign(String),

    #[error("signal too short: {len} samples, need at least {required}")]
    ShortSignal { len: usize, required: usize },

    #[error("no R-peaks detected")]
    NoPeaks,

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: String },

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("correlation undefined: zero variance")]
    UndefinedCorrelation,

    #[error("config: {0}")]
    Config(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// I/O and usage problems, as opposed to failures inside a computation.
    pub fn is_usage(&self) -> bool {
        if let Error::Stage { source, .. } = self {
            return source.is_usage();
        }
        matches!(
            self,
            Error::Io { .. }
                | Error::MalformedHeader { .. }
                | Error::RaggedRow { .. }
                | Error::BadNumber { .. }
                | Error::NonFiniteSample { .. }
                | Error::InvalidSampleRate(_)
                | Error::Format(_)
                | Error::DimensionOverflow { .. }
                | Error::Config(_)
                | Error::UnknownStrategy { .. }
        )
    }
}
