use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt header: {0}")]
    Header(String),
    #[error("channel count mismatch: header declares {declared}, signal holds {found}")]
    ChannelCountMismatch { declared: usize, found: usize },
    #[error("sample count mismatch: expected {expected} values, found {found}")]
    SampleCountMismatch { expected: usize, found: usize },
    #[error("non-finite sample in channel {channel} at index {index}")]
    NonFiniteSample { channel: usize, index: usize },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("record {id} has {have} samples, window needs {need}")]
    WindowTooLong { id: String, have: usize, need: usize },
    #[error("{n} not divisible by {chunks}")]
    NotDivisible { n: usize, chunks: usize },
    #[error("channel {0} absent from record")]
    MissingChannel(String),
    #[error("single-class input: both classes are required")]
    SingleClass,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid signal: {0}")]
    InvalidSignal(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error("leakage: {0}")]
    Leakage(String),
    #[error("incomplete run directory: {0}")]
    IncompleteRun(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable tag for CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Header(_) => "corrupt_header",
            Error::ChannelCountMismatch { .. } => "channel_count_mismatch",
            Error::SampleCountMismatch { .. } => "sample_count_mismatch",
            Error::NonFiniteSample { .. } => "non_finite_sample",
            Error::InvalidRecord(_) => "invalid_record",
            Error::WindowTooLong { .. } => "window_too_long",
            Error::NotDivisible { .. } => "not_divisible",
            Error::MissingChannel(_) => "missing_channel",
            Error::SingleClass => "single_class",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InvalidSignal(_) => "invalid_signal",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::Checkpoint(_) => "corrupt_checkpoint",
            Error::Leakage(_) => "leakage",
            Error::IncompleteRun(_) => "incomplete_run",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
