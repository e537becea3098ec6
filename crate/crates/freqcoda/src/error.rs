use std::path::PathBuf;

/// Failures of the runner, grouped by process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical abort: {0}")]
    Numeric(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// 1 usage/config, 2 data/ingestion, 3 numerical abort.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Usage(_) | Error::Config(_) => 1,
            Error::Data(_) | Error::Io { .. } => 2,
            Error::Numeric(_) => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<freqcoda_core::Error> for Error {
    fn from(e: freqcoda_core::Error) -> Self {
        use freqcoda_core::Error as E;
        match e {
            E::InvalidData(_) => Error::Data(e.to_string()),
            E::NonFinite { .. } | E::Invariant(_) => Error::Numeric(e.to_string()),
            _ => Error::Config(e.to_string()),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
