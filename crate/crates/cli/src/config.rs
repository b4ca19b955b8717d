//! Run settings: defaults, then the TOML config file, then `COP_ENDPOINT` /
//! `COP_API_KEY`, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use cop_core::probe::DEFAULT_PROBE_STRING;
use cop_core::trace::DecodeMode;
use cop_core::{DecodeConfig, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Scripted,
    Toy,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExecKind {
    Sequential,
    #[default]
    Parallel,
}

impl From<ExecKind> for Execution {
    fn from(e: ExecKind) -> Self {
        match e {
            ExecKind::Sequential => Execution::Sequential,
            ExecKind::Parallel => Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSettings {
    pub mode: DecodeMode,
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    pub max_steps: usize,
    pub max_tokens_per_step: usize,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        let d = DecodeConfig::greedy();
        Self {
            mode: d.mode,
            temperature: d.temperature,
            top_k: d.top_k,
            top_p: d.top_p,
            max_steps: d.max_steps,
            max_tokens_per_step: d.max_tokens_per_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Master seed; every derived seed is a fixed offset from it.
    pub seed: u64,
    /// Dataset name used in report rows.
    pub name: String,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub traces: Option<PathBuf>,
    /// Judge label file.
    pub labels: Option<PathBuf>,
    pub template: Option<PathBuf>,
    pub tree: Option<PathBuf>,
    pub backend: BackendKind,
    pub script: Option<PathBuf>,
    pub toy_model: Option<PathBuf>,
    pub endpoint: Option<String>,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub tokenize_path: Option<String>,
    pub top_logprobs: u32,
    pub retry_attempts: u32,
    pub retry_base_ms: u64,
    pub timeout_secs: u64,
    pub answer_labels: Vec<String>,
    pub probe_string: String,
    pub decode: DecodeSettings,
    pub k: usize,
    pub max_samples: usize,
    pub max_leaves: usize,
    pub sigma: f64,
    /// Dataset metadata key that orders the groups of `plot ear-curve`.
    pub group_key: String,
    pub exec: ExecKind,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            name: "dataset".into(),
            out: None,
            dataset: None,
            traces: None,
            labels: None,
            template: None,
            tree: None,
            backend: BackendKind::default(),
            script: None,
            toy_model: None,
            endpoint: None,
            api_key: None,
            model: None,
            tokenize_path: None,
            top_logprobs: 20,
            retry_attempts: 3,
            retry_base_ms: 250,
            timeout_secs: 60,
            answer_labels: ["A", "B", "C", "D"].map(String::from).to_vec(),
            probe_string: DEFAULT_PROBE_STRING.into(),
            decode: DecodeSettings::default(),
            k: 5,
            max_samples: 5,
            max_leaves: 16,
            sigma: 1.0,
            group_key: "group".into(),
            exec: ExecKind::default(),
        }
    }
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut s = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                let mut s: Settings = toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?;
                // relative paths in the config file are relative to the file
                let base = p.parent().unwrap_or(Path::new(""));
                for f in [
                    &mut s.dataset,
                    &mut s.traces,
                    &mut s.labels,
                    &mut s.template,
                    &mut s.tree,
                    &mut s.script,
                    &mut s.toy_model,
                    &mut s.out,
                ] {
                    if let Some(rel) = f.as_mut() {
                        if rel.is_relative() {
                            *rel = base.join(&*rel);
                        }
                    }
                }
                s
            }
            None => Settings::default(),
        };
        if let Ok(v) = std::env::var("COP_ENDPOINT") {
            s.endpoint = Some(v);
        }
        if let Ok(v) = std::env::var("COP_API_KEY") {
            s.api_key = Some(v);
        }
        Ok(s)
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            mode: self.decode.mode,
            temperature: self.decode.temperature,
            top_k: self.decode.top_k,
            top_p: self.decode.top_p,
            seed: self.seed,
            max_steps: self.decode.max_steps,
            max_tokens_per_step: self.decode.max_tokens_per_step,
        }
    }

    pub fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        match value {
            Some(p) => Ok(p),
            None => bail!("missing {flag} (flag or config file)"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cop.toml");
        std::fs::write(
            &p,
            "seed = 9\nscript = \"s.jsonl\"\n[decode]\nmode = \"sample\"\n",
        )
        .unwrap();
        let s = Settings::load(Some(&p)).unwrap();
        assert_eq!(s.seed, 9);
        assert_eq!(s.k, 5);
        assert_eq!(s.decode.mode, DecodeMode::Sample);
        assert_eq!(s.decode.top_k, 40);
        assert_eq!(s.script.unwrap(), dir.path().join("s.jsonl"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cop.toml");
        std::fs::write(&p, "sede = 9\n").unwrap();
        assert!(Settings::load(Some(&p)).is_err());
    }

    #[test]
    fn api_key_stays_out_of_snapshots() {
        let s = Settings {
            api_key: Some("secret".into()),
            ..Default::default()
        };
        assert!(!serde_json::to_string(&s).unwrap().contains("secret"));
    }
}
