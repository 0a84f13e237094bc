use std::path::PathBuf;

/// Errors produced by the library.
///
/// Every variant carries a stable machine-readable code (see [`Error::code`])
/// so callers such as the CLI can emit parsable error lines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An operation was called with inputs that violate its contract
    /// (shape mismatches, empty inputs, out-of-range parameters).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A point sits at or behind the camera plane and cannot be projected.
    #[error("degenerate projection: point {index} has camera depth {depth:.3e}")]
    DegenerateProjection { index: usize, depth: f64 },

    /// All points of a set coincide, so no normalization extent exists.
    #[error("degenerate extent: all points coincident")]
    DegenerateExtent,

    /// An observed bone has zero length, so its direction is undefined.
    #[error("singular bone: observed length of '{0}' is zero")]
    SingularBone(String),

    /// An I/O failure, annotated with the path involved.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its contents do not match the expected format.
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    /// A file declares a format version this build does not understand.
    #[error("unsupported format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
}

impl Error {
    /// Stable identifier for machine-parsable error reporting.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Contract(_) => "contract",
            Error::DegenerateProjection { .. } => "degenerate-projection",
            Error::DegenerateExtent => "degenerate-extent",
            Error::SingularBone(_) => "singular-bone",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Version { .. } => "version",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for contract-violation errors.
macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)*)));
        }
    };
}

pub(crate) use ensure;
