use std::path::PathBuf;

/// Errors raised anywhere in the harness.
///
/// Every variant maps to a stable machine-readable code via [`Error::code`], which the
/// command-line front end prints on failure.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numeric overflow in {0}")]
    NumericOverflow(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("digest mismatch for {file}: manifest says {expected}, file hashes to {actual}")]
    DigestMismatch {
        file: String,
        expected: String,
        actual: String,
    },

    #[error("row count mismatch for {file}: expected {expected} rows, found {actual}")]
    RowCount {
        file: String,
        expected: usize,
        actual: usize,
    },

    #[error("label {label} out of range for {classes} classes in {file}")]
    LabelRange {
        file: String,
        label: u32,
        classes: usize,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },

    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error("incomplete trial: {0}")]
    IncompleteTrial(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable identifier for the error class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "E_DIMENSION",
            Error::NumericOverflow(_) => "E_NUMERIC",
            Error::Index(_) => "E_INDEX",
            Error::Config(_) => "E_CONFIG",
            Error::DigestMismatch { .. } => "E_DIGEST",
            Error::RowCount { .. } => "E_ROW_COUNT",
            Error::LabelRange { .. } => "E_LABEL_RANGE",
            Error::Format { .. } => "E_FORMAT",
            Error::EmptySelection(_) => "E_EMPTY_SELECTION",
            Error::IncompleteTrial(_) => "E_INCOMPLETE_TRIAL",
            Error::Io { .. } => "E_IO",
            Error::Json(_) => "E_JSON",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
