//! Output directory bookkeeping and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use azem_core::records;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub core_version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub status: String,
    /// File name to sha256 for every reproducible output.
    pub outputs: BTreeMap<String, String>,
    /// Files whose content changes between identical runs (wall-clock data).
    pub volatile: Vec<String>,
}

/// Tracks every file a command writes so the manifest can hash them.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
    volatile: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
            volatile: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn track(&mut self, name: &str) {
        if !self.written.iter().any(|n| n == name) {
            self.written.push(name.to_string());
        }
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.track(name);
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, header: &[&str], rows: &[T]) -> Result<PathBuf> {
        let mut buf = Vec::new();
        records::write_csv_with_header(&mut buf, header, rows)?;
        self.write_bytes(name, &buf)
    }

    /// Note a file produced elsewhere (e.g. by the plotting backend).
    pub fn register(&mut self, name: &str) {
        self.track(name);
    }

    pub fn mark_volatile(&mut self, name: &str) {
        if !self.volatile.iter().any(|n| n == name) {
            self.volatile.push(name.to_string());
        }
    }

    pub fn finish(&self, command: &str, seed: u64, config_json: &str, status: &str) -> Result<Manifest> {
        let mut outputs = BTreeMap::new();
        for name in &self.written {
            if self.volatile.contains(name) {
                continue;
            }
            let path = self.path(name);
            if !path.exists() {
                continue;
            }
            let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            outputs.insert(name.clone(), sha256_hex(&bytes));
        }
        let mut volatile = self.volatile.clone();
        volatile.sort();
        let manifest = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: azem_core::VERSION.to_string(),
            seed,
            config_sha256: sha256_hex(config_json.as_bytes()),
            status: status.to_string(),
            outputs,
            volatile,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.path(MANIFEST_FILE), text)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
