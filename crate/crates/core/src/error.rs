use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown tag `{0}`")]
    UnknownTag(String),

    #[error("unknown country `{0}`")]
    UnknownCountry(String),

    #[error("malformed record at line {line_no}: {reason}")]
    MalformedRecord { line_no: usize, reason: String },

    #[error("cannot drop any tag class: {0}")]
    CannotDrop(String),

    #[error("not enough eligible samples for country {country}: need {needed}, have {available}")]
    InsufficientData {
        country: String,
        needed: usize,
        available: usize,
    },

    #[error("pattern mismatch: {0}")]
    PatternMismatch(String),

    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("bad vector file format: {0}")]
    BadFormat(String),

    #[error("vector dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),

    #[error("teacher forcing requested without a gold sequence of matching length")]
    MissingGold,

    #[error("need at least two domains for adversarial pairing, got {0}")]
    TooFewDomains(usize),

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },

    #[error("checkpoint manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("corrupt checkpoint file: {0}")]
    CorruptFile(String),

    #[error("length mismatch: predicted {pred}, gold {gold}")]
    LengthMismatch { pred: usize, gold: usize },

    #[error("country {0} is not allowed for this evaluation suite")]
    CountryNotAllowed(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from input data rather than the model or runtime.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::UnknownTag(_)
                | Error::UnknownCountry(_)
                | Error::MalformedRecord { .. }
                | Error::CannotDrop(_)
                | Error::InsufficientData { .. }
                | Error::PatternMismatch(_)
                | Error::BadFormat(_)
                | Error::DimensionMismatch { .. }
                | Error::EmptyInput(_)
                | Error::LengthMismatch { .. }
                | Error::CountryNotAllowed(_)
                | Error::Io { .. }
        )
    }
}
