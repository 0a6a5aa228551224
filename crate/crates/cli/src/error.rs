use std::io;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] ldl_age_core::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    /// A data row that could not be parsed. Lines are 1-based and count the header.
    #[error("{}: line {line}: {message}", path.display())]
    Row {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Format(String),

    /// Checkpoint and data disagree on grid or embedding dimension.
    #[error("{0}")]
    Mismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 3 for diverged training, 4 for checkpoint/data
    /// mismatches, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(ldl_age_core::Error::Diverged { .. }) => 3,
            Error::Mismatch(_) => 4,
            _ => 2,
        }
    }
}
