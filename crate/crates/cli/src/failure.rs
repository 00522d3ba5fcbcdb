//! Error classes and their process exit codes.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration files. Exit code 2.
    Config(anyhow::Error),
    /// Unreadable or malformed input data. Exit code 3.
    Data(anyhow::Error),
    /// A toolkit invariant did not hold. Exit code 4.
    Internal(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Internal(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, err) = match self {
            Failure::Config(e) => ("config error", e),
            Failure::Data(e) => ("data error", e),
            Failure::Internal(e) => ("internal error", e),
        };
        write!(f, "{kind}: {err:#}")
    }
}

pub trait Classify<T> {
    fn config(self) -> Result<T, Failure>;
    fn data(self) -> Result<T, Failure>;
    fn internal(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }

    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Data(e.into()))
    }

    fn internal(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Internal(e.into()))
    }
}

/// Parses JSON text, reporting `path:line:column` on failure.
pub fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> anyhow::Result<T> {
    serde_json::from_str(text).map_err(|e| {
        // errors at end of input point one past the last line
        let line = text
            .lines()
            .take(e.line().max(1))
            .filter(|l| !l.trim().is_empty())
            .last()
            .unwrap_or("")
            .trim_end();
        anyhow::anyhow!("{}:{}:{}: {e}\n    {line}", path.display(), e.line(), e.column())
    })
}

/// Reads and parses a JSON configuration file.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(anyhow::anyhow!("reading {}: {e}", path.display())))?;
    parse_json(path, &text).config()
}
