use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can surface. Display strings lead with the
/// variant name so operators can grep for them.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("InvalidRequest: {0}")]
    InvalidRequest(String),
    #[error("InvariantViolation: {0}")]
    InvariantViolation(String),
    #[error("MissingField: {0}")]
    MissingField(String),
    #[error("DuplicateId: {0}")]
    DuplicateId(String),
    #[error("DuplicateName: {0}")]
    DuplicateName(String),
    #[error("NotFound: {0}")]
    NotFound(String),
    #[error("UnknownItem: {0}")]
    UnknownItem(String),
    #[error("Incompatible: {0}")]
    Incompatible(String),
    #[error("PayloadRejected: {0}")]
    PayloadRejected(String),
    #[error("DimMismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("PluginError: {0}")]
    PluginError(String),
    #[error("HandshakeMismatch: {0}")]
    HandshakeMismatch(String),
    #[error("LaunchError: {0}")]
    LaunchError(String),
    #[error("BadMagic: {}", .0.display())]
    BadMagic(PathBuf),
    #[error("UnsupportedVersion: {0}")]
    UnsupportedVersion(u16),
    #[error("ChecksumMismatch: {}", .0.display())]
    ChecksumMismatch(PathBuf),
    #[error("TruncatedFile: {0}")]
    TruncatedFile(String),
    #[error("CorruptIndex: {0}")]
    CorruptIndex(String),
    #[error("CorruptRegistry: {0}")]
    CorruptRegistry(String),
    #[error("MalformedCode: {0}")]
    MalformedCode(String),
    #[error("IoError: {context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Kernel(dime_core::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    /// Stable machine-readable code used in API error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidRequest(_) | Error::Kernel(_) => "invalid_request",
            Error::InvariantViolation(_) => "invariant_violation",
            Error::MissingField(_) => "missing_field",
            Error::DuplicateId(_) => "duplicate_id",
            Error::DuplicateName(_) => "duplicate_name",
            Error::NotFound(_) => "not_found",
            Error::UnknownItem(_) => "unknown_item",
            Error::Incompatible(_) => "incompatible",
            Error::PayloadRejected(_) => "payload_rejected",
            Error::DimMismatch { .. } => "dim_mismatch",
            Error::PluginError(_) => "plugin_error",
            Error::HandshakeMismatch(_) => "handshake_mismatch",
            Error::LaunchError(_) => "launch_error",
            Error::BadMagic(_) => "bad_magic",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::ChecksumMismatch(_) => "checksum_mismatch",
            Error::TruncatedFile(_) => "truncated_file",
            Error::CorruptIndex(_) => "corrupt_index",
            Error::CorruptRegistry(_) => "corrupt_registry",
            Error::MalformedCode(_) => "malformed_code",
            Error::Io { .. } => "io_error",
        }
    }

    /// HTTP status for the API layer.
    pub fn status(&self) -> u16 {
        match self {
            Error::InvalidRequest(_)
            | Error::Kernel(_)
            | Error::InvariantViolation(_)
            | Error::MissingField(_)
            | Error::Incompatible(_)
            | Error::PayloadRejected(_)
            | Error::MalformedCode(_) => 400,
            Error::NotFound(_) | Error::UnknownItem(_) => 404,
            Error::DuplicateId(_) | Error::DuplicateName(_) => 409,
            // Only embedders produce DimMismatch once inputs are validated.
            Error::PluginError(_) | Error::HandshakeMismatch(_) | Error::LaunchError(_) | Error::DimMismatch { .. } => 502,
            _ => 500,
        }
    }
}

impl From<dime_core::Error> for Error {
    fn from(e: dime_core::Error) -> Self {
        match e {
            dime_core::Error::DimMismatch { expected, actual } => Error::DimMismatch { expected, actual },
            dime_core::Error::MalformedCode => Error::MalformedCode(e.to_string()),
            other => Error::Kernel(other),
        }
    }
}
