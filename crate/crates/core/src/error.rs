use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("softmax row {row} has no unmasked entry")]
    FullyMasked { row: usize },

    #[error("backward: {0}")]
    Backward(String),

    #[error("parse error in {path} at byte {offset}: {message}")]
    Parse {
        path: String,
        offset: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("missing label: {0}")]
    MissingLabel(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint incompatible with config: {0}")]
    Incompatible(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at step {step}: {message}")]
    Divergence { step: u64, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Incompatible(_) => 2,
            Error::Parse { .. } | Error::Validation(_) | Error::MissingLabel(_) | Error::Io { .. } => 3,
            Error::NonFiniteGradient(_) | Error::Divergence { .. } => 4,
            _ => 1,
        }
    }

    /// Short machine-readable kind used in structured stderr output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::FullyMasked { .. } => "fully_masked",
            Error::Backward(_) => "backward",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::MissingLabel(_) => "missing_label",
            Error::Io { .. } => "io",
            Error::Config(_) => "config",
            Error::Incompatible(_) => "incompatible_checkpoint",
            Error::NonFiniteGradient(_) => "non_finite_gradient",
            Error::Divergence { .. } => "divergence",
        }
    }
}
