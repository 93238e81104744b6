use std::path::PathBuf;

use numkit::NumError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("lexicon line {line}: {msg}")]
    LexiconLine { line: usize, msg: String },
    #[error("word `{0}` is not in the lexicon and has no spell-out fallback")]
    UnknownWord(String),
    #[error("empty lyric")]
    EmptyLyric,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("no CTC alignment: target needs {needed} frames, only {frames} available")]
    Infeasible { needed: usize, frames: usize },
    #[error("mismatched artifacts: {0}")]
    Mismatch(String),
    #[error("training diverged: {0}")]
    Divergence(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence(_) => 3,
            Error::Io { .. } | Error::Wav(_) => 1,
            _ => 2,
        }
    }
}
