use std::path::PathBuf;

use serde_json::json;

/// Failure classes, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Internal(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.into(),
        source,
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Input(_) => 2,
            Self::Io { .. } => 3,
            Self::Internal(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Input(_) => "input",
            Self::Io { .. } => "io",
            Self::Internal(_) => "internal",
        }
    }

    /// Single-line JSON written to stderr on failure.
    pub fn to_json(&self) -> String {
        json!({
            "error": {
                "kind": self.kind(),
                "exit_code": self.exit_code(),
                "message": self.to_string(),
            }
        })
        .to_string()
    }

    /// Prefixes the message with the file it concerns.
    pub(crate) fn in_file(self, path: &std::path::Path) -> Self {
        match self {
            Self::Input(m) => Self::Input(format!("{}: {m}", path.display())),
            Self::Internal(m) => Self::Internal(format!("{}: {m}", path.display())),
            io @ Self::Io { .. } => io,
        }
    }
}

impl From<gridlab_core::Error> for CliError {
    fn from(e: gridlab_core::Error) -> Self {
        match e {
            gridlab_core::Error::Io { path, source } => Self::Io { path, source },
            e if e.is_input() => Self::Input(e.to_string()),
            e => Self::Internal(e.to_string()),
        }
    }
}
