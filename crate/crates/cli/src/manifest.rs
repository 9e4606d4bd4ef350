use std::path::{Path, PathBuf};

use domcert::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Every file of a run with its checksum, plus the config hash and seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub files: Vec<ManifestEntry>,
}

pub fn file_sha256(path: &Path) -> Result<(u64, String)> {
    let data = std::fs::read(path)?;
    Ok((data.len() as u64, hex::encode(Sha256::digest(&data))))
}

fn portable(path: &Path) -> String {
    path.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

impl Manifest {
    pub fn build(dir: &Path, cfg: &ExperimentConfig, files: &[PathBuf]) -> Result<Self> {
        let mut entries = Vec::with_capacity(files.len());
        for f in files {
            let (bytes, sha256) = file_sha256(&dir.join(f))?;
            entries.push(ManifestEntry { path: portable(f), bytes, sha256 });
        }
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            files: entries,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Paths whose current contents no longer match their checksum.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for e in &self.files {
            match file_sha256(&dir.join(&e.path)) {
                Ok((bytes, sha)) if bytes == e.bytes && sha == e.sha256 => {}
                Ok(_) => bad.push(e.path.clone()),
                Err(Error::Io(_)) => bad.push(e.path.clone()),
                Err(other) => return Err(other),
            }
        }
        Ok(bad)
    }
}
