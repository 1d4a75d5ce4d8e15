//! `manifest.json`: what a run did, with which config, on which inputs.

use std::path::{Path, PathBuf};

use mwgan::config::ExperimentConfig;
use mwgan::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
struct InputHash {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    command: String,
    args: Vec<String>,
    tool_version: &'static str,
    config_hash: String,
    config: String,
    inputs: Vec<InputHash>,
    outputs: Vec<String>,
}

/// Git-style object hash: SHA-256 of `blob <len>\0` followed by the bytes.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Regular files under `path` (itself, if a file), sorted.
fn files_under(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let p = entry.map_err(|e| Error::io(&dir, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            tool_version: env!("CARGO_PKG_VERSION"),
            config_hash: config.hash(),
            config: config.to_text(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Record the content hash of a file, or of every file in a directory.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        for f in files_under(path)? {
            let bytes = std::fs::read(&f).map_err(|e| Error::io(&f, e))?;
            self.inputs.push(InputHash { path: f.display().to_string(), sha256: blob_hash(&bytes) });
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        std::fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git_sha256_objects() {
        // `git hash-object --object-format=sha256` of an empty file.
        assert_eq!(blob_hash(b""), "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813");
    }
}
