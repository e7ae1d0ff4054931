use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Estimation(String),
    #[error("{0}")]
    Check(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::Domain(_) => "domain",
            Error::Data(_) => "data",
            Error::Estimation(_) => "estimation",
            Error::Check(_) => "check",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Domain(_) => 2,
            Error::Data(_) | Error::Estimation(_) | Error::Io { .. } => 3,
            Error::Check(_) => 4,
        }
    }
}
