use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty logit vector")]
    EmptyLogits,
    #[error("log-gamma domain: x = {0}")]
    LogGammaDomain(f64),
    #[error("logsumexp of an empty sequence")]
    EmptyLogSumExp,
    #[error("invalid probability vector: {0}")]
    InvalidProbVector(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty labeled set")]
    EmptyLabeledSet,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },
    #[error("requested {k} samples from a pool of {available}")]
    BatchTooLarge { k: usize, available: usize },
    #[error("training diverged")]
    TrainingDiverged,
    #[error("MC-dropout requires dropout")]
    DropoutRequired,
    #[error("not an IDX file: magic {0:#010x}")]
    NotIdx(u32),
    #[error("short read in {0}")]
    ShortRead(String),
    #[error("sample count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("class {class} has {available} samples, {requested} requested")]
    InsufficientClassSamples {
        class: usize,
        available: usize,
        requested: usize,
    },
    #[error("pool index {0} already revealed")]
    DoubleReveal(usize),
    #[error("pool index {index} out of bounds for pool of {len}")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("mismatched run lengths: {0}")]
    MismatchedRuns(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
