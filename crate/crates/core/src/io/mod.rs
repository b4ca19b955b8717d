//! Files in and out: datasets, judge labels, trace files, CSV reports and
//! plot series.

mod dataset;
mod plot;
mod report;
mod traces;

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use thiserror::Error;

pub use dataset::{load_dataset, load_labels, write_dataset, write_labels, Choice, DatasetRecord};
pub use plot::{decile_series, ear_curve, trajectory_series, CurvePoint};
pub use report::{
    accuracy_split_report, decisions_report, ear_report, effect_report, fmt_f64, fmt_opt,
    scores_report, strategy_report, tafcr_report, tree_metrics_report, EarSummary, Report,
    TafcrSummary,
};
pub use traces::{
    read_traces, write_traces, TraceHeader, TraceWriter, INITIAL_PROBE_CONVENTION, TRACE_FORMAT,
    TRACE_VERSION,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("record {0:?}: answer label is not among the choices")]
    InvalidAnswerLabel(String),
    #[error("record {id:?}: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("unsupported file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("serialization failed: {0}")]
    Serialize(String),
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub(crate) fn create(path: &Path) -> Result<std::fs::File, IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    std::fs::File::create(path).map_err(|e| IoError::io(path, e))
}

/// Parses one JSON value per non-blank line; errors carry 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = std::fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| IoError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
