use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_jsonl, IoError};
use crate::analysis::JudgeRecord;
use crate::trace::TargetTokenSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub question: String,
    pub choices: Vec<Choice>,
    pub answer_label: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl DatasetRecord {
    fn validate(&self) -> Result<(), IoError> {
        let mut seen = HashSet::new();
        for c in &self.choices {
            if !seen.insert(c.label.as_str()) {
                return Err(IoError::InvalidRecord {
                    id: self.id.clone(),
                    message: format!("duplicate choice label {:?}", c.label),
                });
            }
        }
        if !seen.contains(self.answer_label.as_str()) {
            return Err(IoError::InvalidAnswerLabel(self.id.clone()));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<&str> {
        self.choices.iter().map(|c| c.label.as_str()).collect()
    }

    /// Question text followed by the lettered choices, the form substituted
    /// into the prompt template.
    pub fn render(&self) -> String {
        let mut out = self.question.clone();
        if !self.choices.is_empty() {
            out.push_str("\nAnswer Choices:");
            for c in &self.choices {
                out.push_str(&format!(" ({}) {}", c.label, c.text));
            }
        }
        out
    }

    /// Index of the gold answer in `target`.
    pub fn gold_index(&self, target: &TargetTokenSet) -> Result<usize, IoError> {
        target
            .index_of(&self.answer_label)
            .ok_or_else(|| IoError::InvalidAnswerLabel(self.id.clone()))
    }

    pub fn metadata_str(&self, key: &str) -> Option<String> {
        self.metadata.get(key).map(|v| match v {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        })
    }
}

/// Reads a JSONL dataset, validating labels and rejecting duplicate ids.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>, IoError> {
    let records: Vec<DatasetRecord> = read_jsonl(path.as_ref())?;
    let mut ids = HashSet::new();
    for r in &records {
        r.validate()?;
        if !ids.insert(r.id.clone()) {
            return Err(IoError::DuplicateId(r.id.clone()));
        }
    }
    Ok(records)
}

pub fn write_dataset(path: impl AsRef<Path>, records: &[DatasetRecord]) -> Result<(), IoError> {
    write_jsonl(path.as_ref(), records)
}

/// Reads judge labels: one `{question_id, answer_correct, cot_correct}` per line.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<JudgeRecord>, IoError> {
    let records: Vec<JudgeRecord> = read_jsonl(path.as_ref())?;
    let mut ids = HashSet::new();
    for r in &records {
        if !ids.insert(r.question_id.clone()) {
            return Err(IoError::DuplicateId(r.question_id.clone()));
        }
    }
    Ok(records)
}

pub fn write_labels(path: impl AsRef<Path>, records: &[JudgeRecord]) -> Result<(), IoError> {
    write_jsonl(path.as_ref(), records)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), IoError> {
    let mut out = std::io::BufWriter::new(super::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| IoError::Serialize(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| IoError::io(path, e))?;
    }
    out.flush().map_err(|e| IoError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = r#"{"id":"q1","question":"Which is a metal?","choices":[{"label":"A","text":"wood"},{"label":"B","text":"iron"}],"answer_label":"B","metadata":{"grade":3}}
{"id":"q2","question":"Sky colour?","choices":[{"label":"A","text":"blue"},{"label":"B","text":"green"}],"answer_label":"A"}
"#;

    #[test]
    fn load_validate_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(&p, TWO).unwrap();
        let recs = load_dataset(&p).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].metadata_str("grade").as_deref(), Some("3"));
        assert_eq!(
            recs[0].render(),
            "Which is a metal?\nAnswer Choices: (A) wood (B) iron"
        );
        let q = dir.path().join("e.jsonl");
        write_dataset(&q, &recs).unwrap();
        assert_eq!(load_dataset(&q).unwrap(), recs);
    }

    #[test]
    fn rejects_bad_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(
            &p,
            TWO.replace("\"answer_label\":\"B\"", "\"answer_label\":\"E\""),
        )
        .unwrap();
        assert!(matches!(load_dataset(&p), Err(IoError::InvalidAnswerLabel(id)) if id == "q1"));
        std::fs::write(&p, TWO.replace("q2", "q1")).unwrap();
        assert!(matches!(load_dataset(&p), Err(IoError::DuplicateId(id)) if id == "q1"));
        std::fs::write(&p, format!("{TWO}{{not json\n")).unwrap();
        assert!(matches!(
            load_dataset(&p),
            Err(IoError::Parse { line: 3, .. })
        ));
    }
}
