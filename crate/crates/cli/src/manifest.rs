use std::collections::BTreeMap;
use std::path::Path;

use latentdag::export::{read_json, write_json};
use latentdag::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// `manifest.json`. It holds nothing that varies between identical reruns:
/// no timestamps, output paths or thread counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// Input role (`input`, `roles`, ...) to its path and SHA-256.
    pub inputs: BTreeMap<String, InputFile>,
    pub config: serde_json::Value,
    /// SHA-256 of the compact JSON form of `config`, filled in on write.
    #[serde(default)]
    pub config_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            inputs: BTreeMap::new(),
            config: serde_json::to_value(config)?,
            config_sha256: String::new(),
        })
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        self.inputs.insert(
            role.to_string(),
            InputFile {
                path: path.display().to_string(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            },
        );
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut out = self.clone();
        out.config_sha256 = hex::encode(Sha256::digest(serde_json::to_vec(&self.config)?));
        write_json(&dir.join("manifest.json"), &out)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        read_json(&dir.join("manifest.json"))
    }
}
