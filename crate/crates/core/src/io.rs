//! File plumbing: WAV, text helpers, manifests and configuration.

pub mod config;
pub mod manifest;
pub mod wav;

use std::path::Path;

use crate::error::{GseError, Result};

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> GseError {
    GseError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_string(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

pub fn read_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_string(path, &serde_json::to_string_pretty(value)?)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_string(path)?)?)
}
