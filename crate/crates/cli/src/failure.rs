//! Command failures and their exit codes.

use std::fmt;
use std::path::{Path, PathBuf};

use negmine_core::Error;

pub const EXIT_IO: i32 = 1;
pub const EXIT_MISSING_INPUT: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
    pub path: Option<PathBuf>,
}

impl Failure {
    fn new(code: i32, kind: &'static str, message: impl Into<String>) -> Self {
        Failure {
            code,
            kind,
            message: message.into(),
            path: None,
        }
    }

    pub fn missing(path: &Path, what: &str) -> Self {
        Failure {
            path: Some(path.to_path_buf()),
            ..Failure::new(EXIT_MISSING_INPUT, "missing-input", format!("{what} not found"))
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Failure::new(EXIT_VALIDATION, "validation", message)
    }

    pub fn invariant(message: impl Into<String>) -> Self {
        Failure::new(EXIT_INVARIANT, "invariant", message)
    }

    pub fn read(path: &Path, err: &std::io::Error) -> Self {
        if err.kind() == std::io::ErrorKind::NotFound {
            return Failure::missing(path, "input");
        }
        Failure::io(path, err)
    }

    pub fn io(path: &Path, err: &std::io::Error) -> Self {
        Failure {
            path: Some(path.to_path_buf()),
            ..Failure::new(EXIT_IO, "io", err.to_string())
        }
    }

    pub fn at(mut self, path: &Path) -> Self {
        self.path.get_or_insert_with(|| path.to_path_buf());
        self
    }

    /// Single-line diagnostic: space-separated `key=value` fields with the
    /// free-text values quoted.
    pub fn diagnostic(&self, stage: &str) -> String {
        let mut line = format!("negmine: error code={} kind={} stage={stage}", self.code, self.kind);
        if let Some(p) = &self.path {
            line.push_str(&format!(" path={:?}", p.display().to_string()));
        }
        line.push_str(&format!(" message={:?}", self.message));
        line
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        match err {
            Error::Io { path, source } => Failure::read(&path, &source),
            Error::SourceExhausted { .. } | Error::NonFiniteLoss { .. } | Error::DuplicatePhrase(_) => {
                Failure::invariant(err.to_string())
            }
            other => Failure::invalid(other.to_string()),
        }
    }
}
