//! Per-run manifest: settings snapshot, seeds, backend descriptor and the
//! sha256 of every input and output. No timestamps, so identical runs give
//! identical manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use cop_core::BackendDescriptor;

use crate::config::Settings;

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    settings: &'a Settings,
    seeds: &'a BTreeMap<String, String>,
    backend: Option<&'a BackendDescriptor>,
    inputs: Vec<FileDigest>,
    /// Relative to the output directory.
    outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects what a command read and wrote.
#[derive(Debug)]
pub struct RunRecord {
    pub out: PathBuf,
    command: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    pub seeds: BTreeMap<String, String>,
    pub backend: Option<BackendDescriptor>,
}

impl RunRecord {
    pub fn new(out: PathBuf, command: &str) -> Self {
        Self {
            out,
            command: command.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seeds: BTreeMap::new(),
            backend: None,
        }
    }

    pub fn input<'p>(&mut self, path: &'p Path) -> &'p Path {
        if !self.inputs.iter().any(|p| p == path) {
            self.inputs.push(path.to_path_buf());
        }
        path
    }

    /// Path for an output file relative to the output directory.
    pub fn output(&mut self, rel: impl AsRef<Path>) -> PathBuf {
        let rel = rel.as_ref().to_path_buf();
        let full = self.out.join(&rel);
        if !self.outputs.contains(&rel) {
            self.outputs.push(rel);
        }
        full
    }

    pub fn seed(&mut self, name: &str, value: impl ToString) {
        self.seeds.insert(name.to_string(), value.to_string());
    }

    /// Writes `manifest-<command>.json` and returns its path.
    pub fn finish(self, settings: &Settings) -> Result<PathBuf> {
        let inputs = self
            .inputs
            .iter()
            .map(|p| {
                Ok(FileDigest {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let outputs = self
            .outputs
            .iter()
            .map(|rel| {
                Ok(FileDigest {
                    path: rel.display().to_string().replace('\\', "/"),
                    sha256: sha256_file(&self.out.join(rel))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let m = Manifest {
            tool: "cop",
            version: env!("CARGO_PKG_VERSION"),
            command: &self.command,
            settings,
            seeds: &self.seeds,
            backend: self.backend.as_ref(),
            inputs,
            outputs,
        };
        let path = self
            .out
            .join(format!("manifest-{}.json", self.command.replace(' ', "-")));
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        std::fs::create_dir_all(&self.out)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
