use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use recouple::io::{config_hash, sha256_hex, write_atomic};

/// Everything needed to rerun a command: the resolved config, the inputs it
/// read (with content hashes) and where it wrote.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub out_dir: PathBuf,
    pub outputs: Vec<PathBuf>,
    pub timestamp: String,
    pub version: &'static str,
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, config_path: Option<&Path>, config: &C, out_dir: &Path) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config_path: config_path.map(Path::to_path_buf),
            config_hash: config_hash(config)?,
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            out_dir: out_dir.to_path_buf(),
            outputs: Vec::new(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            version: env!("CARGO_PKG_VERSION"),
        })
    }

    /// Records the SHA-256 of an input file.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn write(&self) -> Result<PathBuf> {
        let path = self.out_dir.join("manifest.json");
        write_atomic(&path, &serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }
}
