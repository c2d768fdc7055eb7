//! Output run directory: every command writes its files here, then a
//! `manifest.json` listing them with their SHA-256.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub struct RunDir {
    root: PathBuf,
    files: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    library_version: &'a str,
    config_digest: String,
    config: &'a ExperimentConfig,
    files: &'a BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

impl RunDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(CliError::io(root))?;
        Ok(RunDir {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(CliError::io(&path))?;
        self.files.insert(name.into(), sha256_hex(bytes));
        Ok(())
    }

    /// Record a file written by other means.
    pub fn register(&mut self, name: &str) -> CliResult<()> {
        let path = self.path(name);
        let bytes = std::fs::read(&path).map_err(CliError::io(&path))?;
        self.files.insert(name.into(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn finish(mut self, command: &str, cfg: &ExperimentConfig) -> CliResult<()> {
        let files = std::mem::take(&mut self.files);
        let manifest = Manifest {
            command,
            library_version: pfmix::VERSION,
            config_digest: cfg.digest(),
            config: cfg,
            files: &files,
        };
        self.write("manifest.json", to_json(&manifest).as_bytes())
    }
}
