use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::trace::{DecodeConfig, ProbeTrace};

pub const TRACE_FORMAT: &str = "cop-traces";
pub const TRACE_VERSION: u32 = 1;
/// Row 0 is probed right after the rendered prompt, which ends with "Answer:".
pub const INITIAL_PROBE_CONVENTION: &str = "after-prompt";

/// First line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub backend_id: String,
    pub target_labels: Vec<String>,
    pub decode_config: DecodeConfig,
    pub probe_string: String,
    pub initial_probe: String,
}

impl TraceHeader {
    pub fn new(
        backend_id: impl Into<String>,
        target_labels: Vec<String>,
        decode_config: DecodeConfig,
        probe_string: impl Into<String>,
    ) -> Self {
        Self {
            format: TRACE_FORMAT.into(),
            version: TRACE_VERSION,
            backend_id: backend_id.into(),
            target_labels,
            decode_config,
            probe_string: probe_string.into(),
            initial_probe: INITIAL_PROBE_CONVENTION.into(),
        }
    }

    /// Whether traces under `other` may be appended to a file with this header.
    /// Decode settings may differ between runs; the answer alphabet, backend
    /// and probe string may not.
    fn compatible(&self, other: &TraceHeader) -> Result<(), String> {
        if self.target_labels != other.target_labels {
            return Err(format!(
                "target labels {:?} vs {:?}",
                self.target_labels, other.target_labels
            ));
        }
        if self.backend_id != other.backend_id {
            return Err(format!(
                "backend {:?} vs {:?}",
                self.backend_id, other.backend_id
            ));
        }
        if self.probe_string != other.probe_string {
            return Err(format!(
                "probe string {:?} vs {:?}",
                self.probe_string, other.probe_string
            ));
        }
        if self.initial_probe != other.initial_probe {
            return Err("initial probe convention differs".into());
        }
        Ok(())
    }

    fn check_trace(&self, t: &ProbeTrace) -> Result<(), String> {
        if t.matrix().width() != self.target_labels.len() {
            return Err(format!(
                "trace {} has width {} but the header lists {} labels",
                t.question_id(),
                t.matrix().width(),
                self.target_labels.len()
            ));
        }
        if t.backend_id() != self.backend_id || t.probe_string() != self.probe_string {
            return Err(format!(
                "trace {} comes from a different run setup",
                t.question_id()
            ));
        }
        Ok(())
    }
}

fn parse_header(line: &str) -> Result<TraceHeader, IoError> {
    let v: serde_json::Value = serde_json::from_str(line).map_err(|e| IoError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if v.get("format").and_then(|f| f.as_str()) != Some(TRACE_FORMAT) {
        return Err(IoError::Parse {
            line: 1,
            message: "missing trace file header".into(),
        });
    }
    let found = v.get("version").and_then(|x| x.as_u64()).unwrap_or(0);
    if found != u64::from(TRACE_VERSION) {
        return Err(IoError::VersionMismatch {
            found: found as u32,
            expected: TRACE_VERSION,
        });
    }
    serde_json::from_value(v).map_err(|e| IoError::Parse {
        line: 1,
        message: e.to_string(),
    })
}

fn read_header(path: &Path) -> Result<Option<TraceHeader>, IoError> {
    let file = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(IoError::io(path, e)),
    };
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .map_err(|e| IoError::io(path, e))?;
    if first.trim().is_empty() {
        return Ok(None);
    }
    parse_header(&first).map(Some)
}

/// Streams traces to a file, one JSON record per line after the header.
pub struct TraceWriter {
    header: TraceHeader,
    out: std::io::BufWriter<std::fs::File>,
    path: std::path::PathBuf,
}

impl TraceWriter {
    /// Creates or truncates `path` and writes the header.
    pub fn create(path: impl AsRef<Path>, header: TraceHeader) -> Result<Self, IoError> {
        let path = path.as_ref().to_path_buf();
        let mut out = std::io::BufWriter::new(super::create(&path)?);
        serde_json::to_writer(&mut out, &header).map_err(|e| IoError::Serialize(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| IoError::io(&path, e))?;
        Ok(Self { header, out, path })
    }

    /// Appends to an existing file whose header must be compatible, or
    /// creates it.
    pub fn append(path: impl AsRef<Path>, header: TraceHeader) -> Result<Self, IoError> {
        let path = path.as_ref();
        match read_header(path)? {
            None => Self::create(path, header),
            Some(existing) => {
                existing
                    .compatible(&header)
                    .map_err(IoError::HeaderMismatch)?;
                let file = OpenOptions::new()
                    .append(true)
                    .open(path)
                    .map_err(|e| IoError::io(path, e))?;
                Ok(Self {
                    header: existing,
                    out: std::io::BufWriter::new(file),
                    path: path.to_path_buf(),
                })
            }
        }
    }

    pub fn write(&mut self, trace: &ProbeTrace) -> Result<(), IoError> {
        self.header
            .check_trace(trace)
            .map_err(IoError::HeaderMismatch)?;
        serde_json::to_writer(&mut self.out, trace)
            .map_err(|e| IoError::Serialize(e.to_string()))?;
        self.out
            .write_all(b"\n")
            .map_err(|e| IoError::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<(), IoError> {
        self.out.flush().map_err(|e| IoError::io(&self.path, e))
    }
}

pub fn write_traces(
    path: impl AsRef<Path>,
    header: &TraceHeader,
    traces: &[ProbeTrace],
) -> Result<(), IoError> {
    let mut w = TraceWriter::create(path, header.clone())?;
    for t in traces {
        w.write(t)?;
    }
    w.finish()
}

pub fn read_traces(path: impl AsRef<Path>) -> Result<(TraceHeader, Vec<ProbeTrace>), IoError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .transpose()
        .map_err(|e| IoError::io(path, e))?
        .ok_or_else(|| IoError::Parse {
            line: 1,
            message: "empty trace file".into(),
        })?;
    let header = parse_header(&first)?;
    let mut traces = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: ProbeTrace = serde_json::from_str(&line).map_err(|e| IoError::Parse {
            line: i + 2,
            message: e.to_string(),
        })?;
        header.check_trace(&t).map_err(IoError::HeaderMismatch)?;
        traces.push(t);
    }
    Ok((header, traces))
}
