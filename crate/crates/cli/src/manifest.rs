use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use usermod::corpus::bytes_digest;
use usermod::TrainConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRef {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub item: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub corpus: CorpusRef,
    pub variants: Vec<String>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub config: TrainConfig,
    pub timing: Vec<Timing>,
    pub total_seconds: f64,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    pub fn new(command: &str, corpus: CorpusRef, config: TrainConfig, jobs: usize) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            corpus,
            variants: Vec::new(),
            seeds: config.seeds.clone(),
            jobs,
            config,
            timing: Vec::new(),
            total_seconds: 0.0,
            artifacts: Vec::new(),
        }
    }

    /// Writes `bytes` under `root` and records the file.
    pub fn write_artifact(&mut self, root: &Path, relative: PathBuf, bytes: &[u8]) -> Result<()> {
        let path = root.join(&relative);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.artifacts.push(Artifact { path: relative, sha256: bytes_digest(bytes) });
        Ok(())
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        fs::write(root.join(MANIFEST_FILE), bytes)?;
        Ok(())
    }
}
