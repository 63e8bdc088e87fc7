use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, Variant};
use crate::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Git-style object hash: the content prefixed with `blob <len>\0`.
fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Hash of the configuration's canonical JSON serialization.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(cfg)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// file name relative to the run directory
    pub name: String,
    pub bytes: u64,
    pub hash: String,
}

impl FileDigest {
    pub fn of(dir: &Path, name: &str) -> Result<Self> {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(path.display().to_string()),
            _ => Error::Io(e),
        })?;
        Ok(Self {
            name: name.to_string(),
            bytes: bytes.len() as u64,
            hash: blob_hash(&bytes),
        })
    }
}

/// Provenance record written next to every command's outputs. Holds the
/// full configuration so the outputs can be regenerated from it alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub variant: Option<Variant>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// hash over the input digests, in order
    pub content_hash: String,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(
        command: &str,
        cfg: &ExperimentConfig,
        seed: u64,
        variant: Option<Variant>,
        inputs: Vec<FileDigest>,
        outputs: Vec<FileDigest>,
    ) -> Result<Self> {
        let listing: String = inputs.iter().map(|d| format!("{} {}\n", d.hash, d.name)).collect();
        Ok(Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash(cfg)?,
            seed,
            variant,
            inputs,
            outputs,
            content_hash: sha256_hex(listing.as_bytes()),
            config: cfg.clone(),
        })
    }

    pub fn file_name(command: &str, variant: Option<Variant>) -> String {
        match variant {
            Some(v) => format!("{command}_{v}.manifest.json"),
            None => format!("{command}.manifest.json"),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let name = Self::file_name(&self.command, self.variant);
        std::fs::write(dir.join(name), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
