use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to reproduce a run's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub config: Value,
    pub seed: Option<u64>,
    /// SHA-256 over the subcommand, resolved config (less `out`) and input
    /// file contents.
    pub input_hash: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new<C: Serialize>(
        subcommand: &str,
        config: &C,
        seed: Option<u64>,
    ) -> Result<Self, CliError> {
        Ok(Self {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config).map_err(|e| CliError::Usage(e.to_string()))?,
            seed,
            input_hash: String::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
        })
    }

    pub fn input(&mut self, path: &Path) {
        if !self.inputs.iter().any(|p| p == path) {
            self.inputs.push(path.to_path_buf());
        }
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    fn hash(&self) -> Result<String, CliError> {
        let mut h = Sha256::new();
        h.update(self.subcommand.as_bytes());
        h.update([0]);
        let mut config = self.config.clone();
        if let Some(m) = config.as_object_mut() {
            m.remove("out");
        }
        h.update(config.to_string().as_bytes());
        for p in &self.inputs {
            h.update([0]);
            h.update(p.to_string_lossy().as_bytes());
            h.update([0]);
            let bytes = std::fs::read(p).map_err(|e| otws_core::Error::Io {
                path: p.clone(),
                source: e,
            })?;
            h.update(&bytes);
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Stamps the finish time and writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf, CliError> {
        self.input_hash = self.hash()?;
        self.finished_unix_ms = now_ms();
        let path = dir.join(MANIFEST_FILE);
        let text =
            serde_json::to_string_pretty(&self).map_err(|e| CliError::Usage(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| otws_core::Error::Io {
            path: path.clone(),
            source: e,
        })?;
        Ok(path)
    }
}
