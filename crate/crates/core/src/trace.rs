//! Domain types shared by every stage: answer alphabets, confidence rows and
//! matrices, decode settings and the per-question probe trace.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ModelBackend};

/// Probabilities may come back rounded; a row may exceed 1 by at most this much.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("target token set must not be empty")]
    EmptyTargetSet,
    #[error("duplicate target label {0:?}")]
    DuplicateLabel(String),
    #[error(
        "label {label:?} tokenizes to {pieces} tokens; only single-token labels are supported"
    )]
    MultiTokenLabel { label: String, pieces: usize },
    #[error("label {0:?} is not in the backend vocabulary")]
    UnknownToken(String),
    #[error("invalid confidence row: {0}")]
    InvalidRow(String),
    #[error("confidence matrix must have at least one row")]
    EmptyMatrix,
    #[error("confidence matrix rows differ in width ({expected} vs {found})")]
    RaggedMatrix { expected: usize, found: usize },
    #[error("invalid trace {question_id:?}: {reason}")]
    InvalidTrace { question_id: String, reason: String },
    #[error("invalid decode config: {0}")]
    InvalidDecodeConfig(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Backend vocabulary index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetEntry {
    pub label: String,
    pub token: TokenId,
}

/// Ordered answer alphabet; every label maps to exactly one backend token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TargetEntry>", into = "Vec<TargetEntry>")]
pub struct TargetTokenSet {
    entries: Vec<TargetEntry>,
}

impl TargetTokenSet {
    pub fn new(entries: Vec<TargetEntry>) -> Result<Self, TraceError> {
        if entries.is_empty() {
            return Err(TraceError::EmptyTargetSet);
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.label.as_str()) {
                return Err(TraceError::DuplicateLabel(e.label.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TargetEntry] {
        &self.entries
    }

    pub fn labels(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.label.as_str()).collect()
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.entries.get(index).map(|e| e.label.as_str())
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.label == label)
    }
}

impl TryFrom<Vec<TargetEntry>> for TargetTokenSet {
    type Error = TraceError;

    fn try_from(entries: Vec<TargetEntry>) -> Result<Self, Self::Error> {
        Self::new(entries)
    }
}

impl From<TargetTokenSet> for Vec<TargetEntry> {
    fn from(set: TargetTokenSet) -> Self {
        set.entries
    }
}

/// Resolves each answer label to a single backend token.
///
/// Labels are checked for emptiness and duplicates before the backend is
/// consulted.
pub fn validate_target_set<S: AsRef<str>>(
    labels: &[S],
    backend: &dyn ModelBackend,
) -> Result<TargetTokenSet, TraceError> {
    if labels.is_empty() {
        return Err(TraceError::EmptyTargetSet);
    }
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l.as_ref()) {
            return Err(TraceError::DuplicateLabel(l.as_ref().to_string()));
        }
    }
    let mut entries = Vec::with_capacity(labels.len());
    for l in labels {
        let label = l.as_ref();
        let tokens = match backend.label_tokens(label) {
            Ok(t) => t,
            Err(BackendError::UnknownToken(_)) => {
                return Err(TraceError::UnknownToken(label.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        match tokens.as_slice() {
            [] => return Err(TraceError::UnknownToken(label.to_string())),
            [token] => entries.push(TargetEntry {
                label: label.to_string(),
                token: *token,
            }),
            many => {
                return Err(TraceError::MultiTokenLabel {
                    label: label.to_string(),
                    pieces: many.len(),
                })
            }
        }
    }
    TargetTokenSet::new(entries)
}

/// Probabilities of each target label at one probe point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ConfidenceRow(Vec<f64>);

impl ConfidenceRow {
    pub fn new(probs: Vec<f64>) -> Result<Self, TraceError> {
        if probs.is_empty() {
            return Err(TraceError::InvalidRow("row is empty".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(TraceError::InvalidRow(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if sum > 1.0 + ROW_SUM_TOLERANCE {
            return Err(TraceError::InvalidRow(format!(
                "probabilities sum to {sum}"
            )));
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax_row(self)
    }
}

impl TryFrom<Vec<f64>> for ConfidenceRow {
    type Error = TraceError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ConfidenceRow> for Vec<f64> {
    fn from(row: ConfidenceRow) -> Self {
        row.0
    }
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax_row(row: &ConfidenceRow) -> usize {
    let mut best = 0;
    for (i, &p) in row.0.iter().enumerate().skip(1) {
        if p > row.0[best] {
            best = i;
        }
    }
    best
}

/// The (k+1) x |V| matrix of probe rows. Row 0 precedes any reasoning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ConfidenceRow>", into = "Vec<ConfidenceRow>")]
pub struct ConfidenceMatrix {
    rows: Vec<ConfidenceRow>,
}

impl ConfidenceMatrix {
    pub fn new(rows: Vec<ConfidenceRow>) -> Result<Self, TraceError> {
        let first = rows.first().ok_or(TraceError::EmptyMatrix)?;
        let width = first.len();
        if let Some(r) = rows.iter().find(|r| r.len() != width) {
            return Err(TraceError::RaggedMatrix {
                expected: width,
                found: r.len(),
            });
        }
        Ok(Self { rows })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, TraceError> {
        let rows = rows
            .into_iter()
            .map(ConfidenceRow::new)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(rows)
    }

    pub fn rows(&self) -> &[ConfidenceRow] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &ConfidenceRow {
        &self.rows[i]
    }

    pub fn last_row(&self) -> &ConfidenceRow {
        self.rows.last().expect("matrix has at least one row")
    }

    pub fn width(&self) -> usize {
        self.rows[0].len()
    }

    /// Number of reasoning steps k (rows minus the initial probe).
    pub fn step_count(&self) -> usize {
        self.rows.len() - 1
    }

    /// Probabilities of one label across all probe points.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.0[j]).collect()
    }
}

impl TryFrom<Vec<ConfidenceRow>> for ConfidenceMatrix {
    type Error = TraceError;

    fn try_from(rows: Vec<ConfidenceRow>) -> Result<Self, Self::Error> {
        Self::new(rows)
    }
}

impl From<ConfidenceMatrix> for Vec<ConfidenceRow> {
    fn from(m: ConfidenceMatrix) -> Self {
        m.rows
    }
}

/// Per-row argmax over the whole matrix.
pub fn step_predictions(matrix: &ConfidenceMatrix) -> Vec<usize> {
    matrix.rows.iter().map(argmax_row).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// Decoding settings. Greedy mode ignores temperature, top-k, top-p and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub temperature: f64,
    /// 0 disables top-k filtering.
    pub top_k: u32,
    pub top_p: f64,
    pub seed: u64,
    pub max_steps: usize,
    pub max_tokens_per_step: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self::greedy()
    }
}

impl DecodeConfig {
    pub const DEFAULT_MAX_STEPS: usize = 64;
    pub const DEFAULT_MAX_TOKENS_PER_STEP: usize = 128;

    pub fn greedy() -> Self {
        Self {
            mode: DecodeMode::Greedy,
            temperature: 0.7,
            top_k: 40,
            top_p: 0.9,
            seed: 0,
            max_steps: Self::DEFAULT_MAX_STEPS,
            max_tokens_per_step: Self::DEFAULT_MAX_TOKENS_PER_STEP,
        }
    }

    /// Sampling with temperature 0.7, top-k 40, top-p 0.9.
    pub fn sampling(seed: u64) -> Self {
        Self {
            mode: DecodeMode::Sample,
            seed,
            ..Self::greedy()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn with_mode(&self, mode: DecodeMode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: &str| Err(TraceError::InvalidDecodeConfig(m.to_string()));
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if self.max_tokens_per_step == 0 {
            return bad("max_tokens_per_step must be at least 1");
        }
        if self.mode == DecodeMode::Sample {
            if !(self.temperature > 0.0 && self.temperature.is_finite()) {
                return bad("temperature must be > 0");
            }
            if !(self.top_p > 0.0 && self.top_p <= 1.0) {
                return bad("top_p must lie in (0, 1]");
            }
        }
        Ok(())
    }
}

/// Where the final prediction j* came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    /// Parsed from "the answer is (X" in the generated text.
    Parsed,
    /// Extraction failed; argmax of the last probe row was used.
    LastProbe,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceFlags {
    /// A probe row used the floor value for labels missing from a top-N response.
    #[serde(default)]
    pub partial_distribution: bool,
    /// Generation was cut at `max_steps`.
    #[serde(default)]
    pub step_limit_reached: bool,
    /// At least one step hit the per-step token budget without a terminator.
    #[serde(default)]
    pub budget_exceeded: bool,
}

/// Finds the last "the answer is (<label>" occurrence (ASCII case-insensitive).
pub fn extract_answer(text: &str, target: &TargetTokenSet) -> Option<usize> {
    const PATTERN: &str = "the answer is (";
    let lower = text.to_ascii_lowercase();
    let mut end = lower.len();
    while let Some(pos) = lower[..end].rfind(PATTERN) {
        let rest = &text[pos + PATTERN.len()..];
        if let Some(j) = match_label(rest, target) {
            return Some(j);
        }
        end = pos;
    }
    None
}

fn match_label(rest: &str, target: &TargetTokenSet) -> Option<usize> {
    let rest = rest.trim_start();
    let is_boundary = |tail: &str| tail.chars().next().is_none_or(|c| !c.is_alphanumeric());
    // exact case first, then the longest case-insensitive match
    let mut best: Option<(usize, usize)> = None;
    for (j, e) in target.entries().iter().enumerate() {
        let n = e.label.len();
        if rest.len() < n || !rest.is_char_boundary(n) {
            continue;
        }
        let (head, tail) = rest.split_at(n);
        if head == e.label && is_boundary(tail) {
            return Some(j);
        }
        if head.eq_ignore_ascii_case(&e.label)
            && is_boundary(tail)
            && best.is_none_or(|(_, m)| n > m)
        {
            best = Some((j, n));
        }
    }
    best.map(|(j, _)| j)
}

/// Final prediction j*: parsed from the answer text, else argmax of the last row.
pub fn final_prediction(
    answer_text: &str,
    target: &TargetTokenSet,
    matrix: &ConfidenceMatrix,
) -> (usize, PredictionSource) {
    match extract_answer(answer_text, target) {
        Some(j) => (j, PredictionSource::Parsed),
        None => (argmax_row(matrix.last_row()), PredictionSource::LastProbe),
    }
}

/// Everything needed to build a [`ProbeTrace`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceParts {
    pub question_id: String,
    pub prompt: String,
    pub steps: Vec<String>,
    pub matrix: ConfidenceMatrix,
    pub final_prediction: usize,
    pub prediction_source: PredictionSource,
    pub gold: Option<usize>,
    pub decode_config: DecodeConfig,
    pub backend_id: String,
    pub probe_string: String,
    #[serde(default)]
    pub flags: TraceFlags,
}

/// One question's complete probing record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TraceParts", into = "TraceParts")]
pub struct ProbeTrace {
    question_id: String,
    prompt: String,
    steps: Vec<String>,
    matrix: ConfidenceMatrix,
    final_prediction: usize,
    prediction_source: PredictionSource,
    gold: Option<usize>,
    decode_config: DecodeConfig,
    backend_id: String,
    probe_string: String,
    flags: TraceFlags,
}

impl ProbeTrace {
    pub fn new(p: TraceParts) -> Result<Self, TraceError> {
        let invalid = |reason: String| TraceError::InvalidTrace {
            question_id: p.question_id.clone(),
            reason,
        };
        if p.steps.len() != p.matrix.step_count() {
            return Err(invalid(format!(
                "{} steps but {} probe rows",
                p.steps.len(),
                p.matrix.rows().len()
            )));
        }
        let width = p.matrix.width();
        if p.final_prediction >= width {
            return Err(invalid(format!(
                "final prediction {} outside target set of {width}",
                p.final_prediction
            )));
        }
        if let Some(g) = p.gold.filter(|&g| g >= width) {
            return Err(invalid(format!("gold {g} outside target set of {width}")));
        }
        Ok(Self {
            question_id: p.question_id,
            prompt: p.prompt,
            steps: p.steps,
            matrix: p.matrix,
            final_prediction: p.final_prediction,
            prediction_source: p.prediction_source,
            gold: p.gold,
            decode_config: p.decode_config,
            backend_id: p.backend_id,
            probe_string: p.probe_string,
            flags: p.flags,
        })
    }

    /// Trace built directly from a matrix, with placeholder step texts.
    pub fn from_matrix(
        question_id: impl Into<String>,
        matrix: ConfidenceMatrix,
        final_prediction: usize,
        gold: Option<usize>,
    ) -> Result<Self, TraceError> {
        let steps = (1..=matrix.step_count())
            .map(|i| format!("step {i}. "))
            .collect();
        Self::new(TraceParts {
            question_id: question_id.into(),
            prompt: String::new(),
            steps,
            matrix,
            final_prediction,
            prediction_source: PredictionSource::Parsed,
            gold,
            decode_config: DecodeConfig::greedy(),
            backend_id: "synthetic".into(),
            probe_string: String::new(),
            flags: TraceFlags::default(),
        })
    }

    pub fn question_id(&self) -> &str {
        &self.question_id
    }

    pub fn prompt(&self) -> &str {
        &self.prompt
    }

    pub fn steps(&self) -> &[String] {
        &self.steps
    }

    pub fn answer_text(&self) -> String {
        self.steps.concat()
    }

    pub fn matrix(&self) -> &ConfidenceMatrix {
        &self.matrix
    }

    pub fn step_count(&self) -> usize {
        self.matrix.step_count()
    }

    pub fn final_prediction(&self) -> usize {
        self.final_prediction
    }

    pub fn prediction_source(&self) -> PredictionSource {
        self.prediction_source
    }

    pub fn gold(&self) -> Option<usize> {
        self.gold
    }

    pub fn is_correct(&self) -> Option<bool> {
        self.gold.map(|g| g == self.final_prediction)
    }

    pub fn decode_config(&self) -> &DecodeConfig {
        &self.decode_config
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn probe_string(&self) -> &str {
        &self.probe_string
    }

    pub fn flags(&self) -> &TraceFlags {
        &self.flags
    }

    /// p_i of the final prediction for i = 0..=k.
    pub fn final_column(&self) -> Vec<f64> {
        self.matrix.column(self.final_prediction)
    }

    /// Same trace with a different gold label.
    pub fn with_gold(&self, gold: Option<usize>) -> Result<Self, TraceError> {
        let mut parts = TraceParts::from(self.clone());
        parts.gold = gold;
        Self::new(parts)
    }
}

impl TryFrom<TraceParts> for ProbeTrace {
    type Error = TraceError;

    fn try_from(p: TraceParts) -> Result<Self, Self::Error> {
        Self::new(p)
    }
}

impl From<ProbeTrace> for TraceParts {
    fn from(t: ProbeTrace) -> Self {
        Self {
            question_id: t.question_id,
            prompt: t.prompt,
            steps: t.steps,
            matrix: t.matrix,
            final_prediction: t.final_prediction,
            prediction_source: t.prediction_source,
            gold: t.gold,
            decode_config: t.decode_config,
            backend_id: t.backend_id,
            probe_string: t.probe_string,
            flags: t.flags,
        }
    }
}
