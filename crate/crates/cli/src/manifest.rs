use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// `den.png` + `"manifest.json"` → `den.manifest.json`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

/// A file the command read, identified by content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|source| inr_denoise::Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }

    /// Fails unless the file at `path` still has the recorded content.
    pub fn verify(&self, path: &Path) -> Result<(), CliError> {
        let now = Self::of(path)?;
        if now.sha256 != self.sha256 {
            return Err(CliError::Data(format!(
                "{} does not match the recorded input {} (sha256 {} vs {})",
                path.display(),
                self.path.display(),
                now.sha256,
                self.sha256
            )));
        }
        Ok(())
    }
}

/// A noise level on both intensity scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sigma {
    pub sigma_unit_scale: f64,
    pub sigma_255_scale: f64,
}

impl Sigma {
    pub fn from_unit(sigma: f64) -> Self {
        Self {
            sigma_unit_scale: sigma,
            sigma_255_scale: sigma * 255.0,
        }
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("manifest serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|source| inr_denoise::Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("cannot read manifest {}: {e}", path.display())))
}
