//! Subcommands of the `chewssl` runner, usable in-process.

pub mod commands;
pub mod config;
pub mod layout;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Failure of a command, reported as one JSON object on stderr.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hint: Option<String>,
}

impl CliError {
    pub fn config(message: String) -> Self {
        Self { kind: "config", message, hint: None }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self { kind: "io", message: format!("{}: {e}", path.display()), hint: None }
    }

    /// An upstream artifact is absent; `command` is the subcommand that makes it.
    pub fn missing(path: &Path, command: &str) -> Self {
        Self {
            kind: "missing_artifact",
            message: format!("{} does not exist", path.display()),
            hint: Some(format!("run `chewssl {command}` first")),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            "config" => 2,
            "missing_artifact" => 3,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)?;
        if let Some(h) = &self.hint {
            write!(f, " ({h})")?;
        }
        Ok(())
    }
}

impl std::error::Error for CliError {}

impl From<chewing_ssl::Error> for CliError {
    fn from(e: chewing_ssl::Error) -> Self {
        use chewing_ssl::Error as E;
        let kind = match &e {
            E::InvalidArgument(_) => "invalid_argument",
            E::Shape(_) => "shape",
            E::Numeric(_) => "numeric",
            E::Io { .. } => "io",
            E::WeightFile { .. } | E::VersionMismatch { .. } => "weight_file",
            _ => "format",
        };
        Self { kind, message: e.to_string(), hint: None }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self { kind: "format", message: e.to_string(), hint: None }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Fails with a "run X first" diagnostic when `path` is absent.
pub fn require(path: PathBuf, command: &str) -> CliResult<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::missing(&path, command))
    }
}
