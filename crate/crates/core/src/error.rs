use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Vector or code length disagrees with the matrix / model dimension.
    DimMismatch { expected: usize, actual: usize },
    /// Packed code with nonzero padding bits or a wrong octet count.
    MalformedCode,
    /// An aggregate was requested over no values.
    EmptyInput,
    /// No relevant item appears in the ranking.
    NoRelevant,
    InvalidArgument(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimMismatch { expected, actual } => {
                write!(f, "DimMismatch: expected dimension {expected}, got {actual}")
            }
            Error::MalformedCode => f.write_str("MalformedCode: packed code has nonzero padding or wrong length"),
            Error::EmptyInput => f.write_str("EmptyInput: no values"),
            Error::NoRelevant => f.write_str("NoRelevant: no relevant item in ranking"),
            Error::InvalidArgument(msg) => write!(f, "InvalidArgument: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
