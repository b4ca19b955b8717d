//! Scripted replay backend.
//!
//! A script is line-delimited JSON. Each record names a `context_key`, a
//! `kind` (`"step"` or `"probe"`) and a payload:
//!
//! ```text
//! {"context_key": "Which gas do plants absorb?", "kind": "step",
//!  "payload": {"index": 1, "text": "Plants take in carbon dioxide. "}}
//! {"context_key": "Which gas do plants absorb?", "kind": "probe",
//!  "payload": {"index": 0, "probs": {"A": 0.1, "B": 0.6, "C": 0.2, "D": 0.1}}}
//! ```
//!
//! Step `i` (1-based) is the i-th reasoning sentence; probe `i` (0-based) is
//! the label distribution after `i` steps. Payloads may carry `"variant"`
//! (default 0) to script alternative reasoning chains for one question, and
//! step payloads may carry `"weight"` (default 1) to set a variant's sampling
//! weight.
//!
//! A prompt selects the question whose `context_key` occurs latest in it. The
//! backend then behaves as a character-level language model over the scripted
//! continuations: at every position the next-character distribution mixes the
//! variants consistent with the text generated so far, and end-of-sequence
//! follows a variant's last step. Appending the probe string at a step
//! boundary yields the scripted probe row; mass not assigned to any label goes
//! to a reserved token outside the label set.
//!
//! Each cache cell holds the matcher position (question, trie node, probe
//! offset) reached after that token, so lookups never rescan the context.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    BackendDescriptor, BackendError, CacheCell, Distribution, GenerationState, ModelBackend,
};
use crate::probe::DEFAULT_PROBE_STRING;
use crate::trace::{TokenId, ROW_SUM_TOLERANCE};

const EOS: TokenId = TokenId(0x11_0000);
const OTHER: TokenId = TokenId(0x11_0001);
const FIRST_LABEL_ID: u32 = 0x11_0002;

const NO_QUESTION: u64 = u64::MAX;
const TAG_SHIFT: u32 = 62;
const TAG_NODE: u64 = 0;
const TAG_PROBE: u64 = 1;
const TAG_DEAD: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Step,
    Probe,
}

/// One line of a script file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRecord {
    pub context_key: String,
    pub kind: RecordKind,
    pub payload: serde_json::Value,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepPayload {
    index: usize,
    text: String,
    #[serde(default)]
    variant: u32,
    weight: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbePayload {
    index: usize,
    probs: BTreeMap<String, f64>,
    #[serde(default)]
    variant: u32,
}

#[derive(Debug, Default, Clone)]
struct VariantScript {
    weight: Option<f64>,
    steps: BTreeMap<usize, String>,
    probes: BTreeMap<usize, Vec<(String, f64)>>,
    first_line: usize,
}

/// Programmatic script construction; also used by the file loader.
#[derive(Debug, Default, Clone)]
pub struct ScriptedBuilder {
    // insertion-ordered keys
    order: Vec<String>,
    questions: HashMap<String, BTreeMap<u32, VariantScript>>,
    name: Option<String>,
}

impl ScriptedBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    fn variant_mut(&mut self, key: &str, variant: u32, line: usize) -> &mut VariantScript {
        if !self.questions.contains_key(key) {
            self.order.push(key.to_string());
        }
        self.questions
            .entry(key.to_string())
            .or_default()
            .entry(variant)
            .or_insert_with(|| VariantScript {
                first_line: line,
                ..Default::default()
            })
    }

    /// Adds a complete variant: `steps` are s_1..s_k and `probes` are rows
    /// c_0..c_k (fewer rows are allowed; missing ones miss at query time).
    pub fn add_variant(
        &mut self,
        key: &str,
        variant: u32,
        weight: f64,
        steps: &[String],
        probes: &[Vec<(String, f64)>],
    ) -> &mut Self {
        let v = self.variant_mut(key, variant, 0);
        v.weight = Some(weight);
        for (i, s) in steps.iter().enumerate() {
            v.steps.insert(i + 1, s.clone());
        }
        for (i, p) in probes.iter().enumerate() {
            v.probes.insert(i, p.clone());
        }
        self
    }

    fn add_record(&mut self, rec: ScriptRecord, line: usize) -> Result<(), BackendError> {
        let err = |message: String| BackendError::ScriptParse { line, message };
        match rec.kind {
            RecordKind::Step => {
                let p: StepPayload =
                    serde_json::from_value(rec.payload).map_err(|e| err(e.to_string()))?;
                if p.index == 0 {
                    return Err(err("step indices start at 1".into()));
                }
                if let Some(w) = p.weight {
                    if !(w > 0.0 && w.is_finite()) {
                        return Err(err(format!("weight must be positive, got {w}")));
                    }
                }
                let v = self.variant_mut(&rec.context_key, p.variant, line);
                if let (Some(a), Some(b)) = (v.weight, p.weight) {
                    if a != b {
                        return Err(err("conflicting variant weights".into()));
                    }
                }
                v.weight = v.weight.or(p.weight);
                if v.steps.insert(p.index, p.text).is_some() {
                    return Err(err(format!("duplicate step {}", p.index)));
                }
            }
            RecordKind::Probe => {
                let p: ProbePayload =
                    serde_json::from_value(rec.payload).map_err(|e| err(e.to_string()))?;
                check_row(&p.probs).map_err(err)?;
                let v = self.variant_mut(&rec.context_key, p.variant, line);
                let row = p.probs.into_iter().collect();
                if v.probes.insert(p.index, row).is_some() {
                    return Err(err(format!("duplicate probe {}", p.index)));
                }
            }
        }
        Ok(())
    }

    pub fn to_records(&self) -> Vec<ScriptRecord> {
        let mut out = Vec::new();
        for key in &self.order {
            for (&variant, v) in &self.questions[key] {
                for (&index, text) in &v.steps {
                    let mut payload = serde_json::json!({ "index": index, "text": text });
                    if variant != 0 {
                        payload["variant"] = variant.into();
                    }
                    if index == 1 {
                        if let Some(w) = v.weight {
                            payload["weight"] = w.into();
                        }
                    }
                    out.push(ScriptRecord {
                        context_key: key.clone(),
                        kind: RecordKind::Step,
                        payload,
                    });
                }
                for (&index, row) in &v.probes {
                    let probs: serde_json::Map<String, serde_json::Value> =
                        row.iter().map(|(l, p)| (l.clone(), (*p).into())).collect();
                    let mut payload = serde_json::json!({ "index": index, "probs": probs });
                    if variant != 0 {
                        payload["variant"] = variant.into();
                    }
                    out.push(ScriptRecord {
                        context_key: key.clone(),
                        kind: RecordKind::Probe,
                        payload,
                    });
                }
            }
        }
        out
    }

    pub fn build(&self) -> Result<ScriptedBackend, BackendError> {
        let mut labels: Vec<String> = Vec::new();
        for key in &self.order {
            for v in self.questions[key].values() {
                for row in v.probes.values() {
                    for (l, _) in row {
                        if !labels.contains(l) {
                            labels.push(l.clone());
                        }
                    }
                }
            }
        }
        let mut label_ids = HashMap::new();
        let mut next = FIRST_LABEL_ID;
        for l in &labels {
            let mut chars = l.chars();
            let id = match (chars.next(), chars.next()) {
                (Some(c), None) => TokenId(c as u32),
                (None, _) => {
                    return Err(BackendError::ScriptParse {
                        line: 0,
                        message: "empty label in probe row".into(),
                    })
                }
                _ => {
                    next += 1;
                    TokenId(next - 1)
                }
            };
            label_ids.insert(l.clone(), id);
        }

        let mut questions = Vec::with_capacity(self.order.len());
        for key in &self.order {
            let mut trie = Trie::new();
            for v in self.questions[key].values() {
                let n = v.steps.len();
                if let Some((&last, _)) = v.steps.iter().next_back() {
                    if last != n {
                        return Err(BackendError::ScriptParse {
                            line: v.first_line,
                            message: format!("steps of {key:?} are not numbered 1..={n}"),
                        });
                    }
                }
                if let Some((&idx, _)) = v.probes.iter().find(|(&i, _)| i > n) {
                    return Err(BackendError::ScriptParse {
                        line: v.first_line,
                        message: format!("probe {idx} of {key:?} exceeds step count {n}"),
                    });
                }
                let rows: Vec<Option<Vec<(TokenId, f64)>>> = (0..=n)
                    .map(|i| {
                        v.probes
                            .get(&i)
                            .map(|row| row.iter().map(|(l, p)| (label_ids[l], *p)).collect())
                    })
                    .collect();
                trie.insert(v.weight.unwrap_or(1.0), v.steps.values(), rows);
            }
            questions.push(ScriptedQuestion {
                key: key.clone(),
                trie,
            });
        }
        Ok(ScriptedBackend {
            id: format!("scripted:{}", self.name.as_deref().unwrap_or("inline")),
            questions,
            labels,
            label_ids,
            probe: DEFAULT_PROBE_STRING.chars().collect(),
        })
    }
}

fn check_row(row: &BTreeMap<String, f64>) -> Result<(), String> {
    if row.is_empty() {
        return Err("probe row is empty".into());
    }
    if let Some((l, p)) = row.iter().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
        return Err(format!("probability of {l:?} is {p}"));
    }
    let sum: f64 = row.values().sum();
    if sum > 1.0 + ROW_SUM_TOLERANCE {
        return Err(format!("probe row sums to {sum}"));
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: Vec<(char, usize)>,
    end_weight: f64,
    probe_row: Option<Vec<(TokenId, f64)>>,
    is_boundary: bool,
}

#[derive(Debug, Clone)]
struct Trie {
    nodes: Vec<TrieNode>,
    // weight of the variants passing through each node, parallel to `nodes`
    weights: Vec<f64>,
}

impl Trie {
    fn new() -> Self {
        Self {
            nodes: vec![TrieNode::default()],
            weights: vec![0.0],
        }
    }

    fn child(&self, node: usize, c: char) -> Option<usize> {
        self.nodes[node]
            .children
            .iter()
            .find(|(ch, _)| *ch == c)
            .map(|&(_, n)| n)
    }

    fn mark_boundary(&mut self, node: usize, row: &Option<Vec<(TokenId, f64)>>) {
        let n = &mut self.nodes[node];
        n.is_boundary = true;
        if n.probe_row.is_none() {
            n.probe_row = row.clone();
        }
    }

    fn insert<'a>(
        &mut self,
        weight: f64,
        steps: impl Iterator<Item = &'a String>,
        rows: Vec<Option<Vec<(TokenId, f64)>>>,
    ) {
        let mut node = 0;
        self.weights[0] += weight;
        self.mark_boundary(0, &rows[0]);
        for (i, step) in steps.enumerate() {
            for c in step.chars() {
                node = match self.child(node, c) {
                    Some(n) => n,
                    None => {
                        self.nodes.push(TrieNode::default());
                        self.weights.push(0.0);
                        let n = self.nodes.len() - 1;
                        let children = &mut self.nodes[node].children;
                        let pos = children.partition_point(|(ch, _)| *ch < c);
                        children.insert(pos, (c, n));
                        n
                    }
                };
                self.weights[node] += weight;
            }
            self.mark_boundary(node, &rows[i + 1]);
        }
        self.nodes[node].end_weight += weight;
    }
}

#[derive(Debug, Clone)]
struct ScriptedQuestion {
    key: String,
    trie: Trie,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cursor {
    Node {
        question: usize,
        node: usize,
    },
    Probe {
        question: usize,
        node: usize,
        offset: usize,
    },
    Dead,
}

impl Cursor {
    fn encode(self) -> CacheCell {
        match self {
            Cursor::Node { question, node } => {
                CacheCell([question as u64, (TAG_NODE << TAG_SHIFT) | node as u64])
            }
            Cursor::Probe {
                question,
                node,
                offset,
            } => CacheCell([
                question as u64,
                (TAG_PROBE << TAG_SHIFT) | ((offset as u64) << 32) | node as u64,
            ]),
            Cursor::Dead => CacheCell([NO_QUESTION, TAG_DEAD << TAG_SHIFT]),
        }
    }

    fn decode(cell: CacheCell) -> Self {
        let [q, word] = cell.0;
        let node = (word & 0xffff_ffff) as usize;
        match word >> TAG_SHIFT {
            TAG_NODE if q != NO_QUESTION => Cursor::Node {
                question: q as usize,
                node,
            },
            TAG_PROBE if q != NO_QUESTION => Cursor::Probe {
                question: q as usize,
                node,
                offset: ((word >> 32) & 0x3fff_ffff) as usize,
            },
            _ => Cursor::Dead,
        }
    }
}

/// Backend replaying scripted reasoning chains and probe rows.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    id: String,
    questions: Vec<ScriptedQuestion>,
    labels: Vec<String>,
    label_ids: HashMap<String, TokenId>,
    probe: Vec<char>,
}

impl ScriptedBackend {
    pub fn from_records(
        records: impl IntoIterator<Item = ScriptRecord>,
    ) -> Result<Self, BackendError> {
        let mut b = ScriptedBuilder::new();
        for (i, rec) in records.into_iter().enumerate() {
            b.add_record(rec, i + 1)?;
        }
        b.build()
    }

    pub fn parse(text: &str, name: &str) -> Result<Self, BackendError> {
        let mut b = ScriptedBuilder::new().name(name);
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ScriptRecord =
                serde_json::from_str(line).map_err(|e| BackendError::ScriptParse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            b.add_record(rec, i + 1)?;
        }
        b.build()
    }

    /// Loads a script file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "script".into());
        Self::parse(&text, &name)
    }

    /// Probe string recognized at step boundaries (default `" So, the answer is ("`).
    pub fn with_probe_string(mut self, probe: &str) -> Self {
        self.probe = probe.chars().collect();
        self
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn question_keys(&self) -> impl Iterator<Item = &str> {
        self.questions.iter().map(|q| q.key.as_str())
    }

    fn resolve_question(&self, prompt: &str) -> Option<usize> {
        let mut best: Option<(usize, usize, usize)> = None;
        for (qi, q) in self.questions.iter().enumerate() {
            if q.key.is_empty() {
                continue;
            }
            if let Some(pos) = prompt.rfind(&q.key) {
                let end = pos + q.key.len();
                let better = best.is_none_or(|(be, bl, _)| (end, q.key.len()) > (be, bl));
                if better {
                    best = Some((end, q.key.len(), qi));
                }
            }
        }
        best.map(|(_, _, qi)| qi)
    }

    fn token_char(token: TokenId) -> Option<char> {
        if token.0 < EOS.0 {
            char::from_u32(token.0)
        } else {
            None
        }
    }

    fn advance(&self, cursor: Cursor, token: TokenId) -> Cursor {
        let c = Self::token_char(token);
        match cursor {
            Cursor::Node { question, node } => {
                let trie = &self.questions[question].trie;
                if let Some(child) = c.and_then(|c| trie.child(node, c)) {
                    Cursor::Node {
                        question,
                        node: child,
                    }
                } else if c.is_some() && self.probe.first().copied() == c {
                    Cursor::Probe {
                        question,
                        node,
                        offset: 1,
                    }
                } else {
                    Cursor::Dead
                }
            }
            Cursor::Probe {
                question,
                node,
                offset,
            } => {
                if c.is_some() && self.probe.get(offset).copied() == c {
                    Cursor::Probe {
                        question,
                        node,
                        offset: offset + 1,
                    }
                } else {
                    Cursor::Dead
                }
            }
            Cursor::Dead => Cursor::Dead,
        }
    }

    fn miss(&self, state: &GenerationState) -> BackendError {
        let tail: String = state
            .tokens()
            .iter()
            .rev()
            .take(60)
            .filter_map(|&t| Self::token_char(t))
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        BackendError::ScriptMiss(tail)
    }
}

impl ModelBackend for ScriptedBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            backend_id: self.id.clone(),
            vocabulary_size: u64::from(FIRST_LABEL_ID) + self.labels.len() as u64,
            supports_full_distribution: true,
            top_logprobs_limit: None,
        }
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, BackendError> {
        if let Some(&id) = self.label_ids.get(text) {
            return Ok(vec![id]);
        }
        Ok(text.chars().map(|c| TokenId(c as u32)).collect())
    }

    fn decode(&self, tokens: &[TokenId]) -> Result<String, BackendError> {
        let mut out = String::new();
        for &t in tokens {
            if let Some(c) = Self::token_char(t) {
                out.push(c);
            } else if t.0 >= FIRST_LABEL_ID {
                let label = self
                    .label_ids
                    .iter()
                    .find(|(_, &id)| id == t)
                    .map(|(l, _)| l.as_str())
                    .ok_or_else(|| BackendError::UnknownToken(format!("id {}", t.0)))?;
                out.push_str(label);
            }
        }
        Ok(out)
    }

    fn eos_token(&self) -> Option<TokenId> {
        Some(EOS)
    }

    fn label_tokens(&self, label: &str) -> Result<Vec<TokenId>, BackendError> {
        if let Some(&id) = self.label_ids.get(label) {
            return Ok(vec![id]);
        }
        if label.chars().count() <= 1 {
            return Err(BackendError::UnknownToken(label.to_string()));
        }
        self.tokenize(label)
    }

    fn start(&self, prompt: &str, seed: u64) -> Result<GenerationState, BackendError> {
        let mut state = GenerationState::seeded(seed, prompt);
        let tokens = self.tokenize(prompt)?;
        let question = self.resolve_question(prompt);
        let n = tokens.len();
        for (i, t) in tokens.into_iter().enumerate() {
            let cursor = match question {
                Some(q) if i + 1 == n => Cursor::Node {
                    question: q,
                    node: 0,
                },
                _ => Cursor::Dead,
            };
            state.push(t, cursor.encode());
        }
        Ok(state)
    }

    fn extend(&self, state: &mut GenerationState, tokens: &[TokenId]) -> Result<(), BackendError> {
        for &t in tokens {
            let prev = state.last_cell().map_or(Cursor::Dead, Cursor::decode);
            let next = self.advance(prev, t);
            state.push(t, next.encode());
        }
        Ok(())
    }

    fn next_distribution(&self, state: &GenerationState) -> Result<Distribution, BackendError> {
        let cursor = state.last_cell().map_or(Cursor::Dead, Cursor::decode);
        match cursor {
            Cursor::Node { question, node } => {
                let trie = &self.questions[question].trie;
                let n = &trie.nodes[node];
                let mut entries: Vec<(TokenId, f64)> = n
                    .children
                    .iter()
                    .map(|&(c, child)| (TokenId(c as u32), trie.weights[child]))
                    .collect();
                if n.end_weight > 0.0 {
                    entries.push((EOS, n.end_weight));
                }
                let total: f64 = entries.iter().map(|e| e.1).sum();
                if total <= 0.0 {
                    return Err(self.miss(state));
                }
                for e in &mut entries {
                    e.1 /= total;
                }
                Distribution::new(entries, true)
            }
            Cursor::Probe {
                question,
                node,
                offset,
            } if offset == self.probe.len() => {
                let n = &self.questions[question].trie.nodes[node];
                let row = match (&n.probe_row, n.is_boundary) {
                    (Some(row), true) => row,
                    _ => return Err(self.miss(state)),
                };
                let mut entries = row.clone();
                let mass: f64 = entries.iter().map(|e| e.1).sum();
                if mass < 1.0 {
                    entries.push((OTHER, 1.0 - mass));
                }
                Distribution::new(entries, true)
            }
            _ => Err(self.miss(state)),
        }
    }
}
