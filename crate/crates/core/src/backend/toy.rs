//! Deterministic order-n table language model.
//!
//! The model counts next-token frequencies after every (n-1)-token context in
//! a small corpus. Unseen contexts fall back to the uniform distribution over
//! the vocabulary. Tokenization is greedy longest-match over the vocabulary.
//!
//! Each cache cell stores the table row resolved for the context ending at
//! that token, so reading the next distribution only touches the last cell.
//! A cell left behind by a probe would therefore change what generation sees
//! next, which is what the probe non-interference tests rely on.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    BackendDescriptor, BackendError, CacheCell, Distribution, GenerationState, ModelBackend,
};
use crate::trace::TokenId;

const NO_ROW: u64 = u64::MAX;

fn default_order() -> usize {
    3
}

fn default_true() -> bool {
    true
}

/// Serializable model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyLmSpec {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_order")]
    pub order: usize,
    /// Exact vocabulary. When absent, printable ASCII, newline, every corpus
    /// character and `pieces` are used.
    #[serde(default)]
    pub vocab: Option<Vec<String>>,
    /// Extra multi-character tokens for the derived vocabulary.
    #[serde(default)]
    pub pieces: Vec<String>,
    #[serde(default)]
    pub corpus: Vec<String>,
    /// Append an end-of-sequence token to the vocabulary and to every corpus text.
    #[serde(default = "default_true")]
    pub eos: bool,
}

impl Default for ToyLmSpec {
    fn default() -> Self {
        Self {
            name: None,
            order: default_order(),
            vocab: None,
            pieces: Vec::new(),
            corpus: Vec::new(),
            eos: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyLm {
    name: String,
    order: usize,
    vocab: Vec<String>,
    index: HashMap<String, TokenId>,
    max_piece_chars: usize,
    eos: Option<TokenId>,
    contexts: HashMap<Vec<TokenId>, usize>,
    rows: Vec<Vec<f64>>,
}

impl ToyLm {
    pub fn new(spec: &ToyLmSpec) -> Result<Self, BackendError> {
        if spec.order < 2 {
            return Err(BackendError::InvalidModel(
                "order must be at least 2".into(),
            ));
        }
        let mut vocab: Vec<String> = match &spec.vocab {
            Some(v) => v.clone(),
            None => {
                let mut chars: Vec<char> = (0x20u8..0x7f).map(char::from).collect();
                chars.push('\n');
                for text in spec.corpus.iter().chain(&spec.pieces) {
                    chars.extend(text.chars());
                }
                chars.sort_unstable();
                chars.dedup();
                let mut v: Vec<String> = chars.into_iter().map(String::from).collect();
                let mut pieces: Vec<&String> = spec
                    .pieces
                    .iter()
                    .filter(|p| p.chars().count() > 1)
                    .collect();
                pieces.sort();
                pieces.dedup();
                v.extend(pieces.into_iter().cloned());
                v
            }
        };
        if vocab.iter().any(String::is_empty) {
            return Err(BackendError::InvalidModel("empty vocabulary entry".into()));
        }
        let mut index = HashMap::new();
        for (i, piece) in vocab.iter().enumerate() {
            if index.insert(piece.clone(), TokenId(i as u32)).is_some() {
                return Err(BackendError::InvalidModel(format!(
                    "duplicate token {piece:?}"
                )));
            }
        }
        let eos = spec.eos.then(|| {
            vocab.push(String::new());
            TokenId(vocab.len() as u32 - 1)
        });
        if vocab.is_empty() {
            return Err(BackendError::InvalidModel("empty vocabulary".into()));
        }
        let max_piece_chars = vocab.iter().map(|p| p.chars().count()).max().unwrap_or(1);
        let mut lm = Self {
            name: spec.name.clone().unwrap_or_else(|| "toy".into()),
            order: spec.order,
            vocab,
            index,
            max_piece_chars,
            eos,
            contexts: HashMap::new(),
            rows: Vec::new(),
        };
        lm.train(&spec.corpus)?;
        Ok(lm)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)?;
        let spec: ToyLmSpec =
            serde_json::from_str(&text).map_err(|e| BackendError::InvalidModel(e.to_string()))?;
        Self::new(&spec)
    }

    fn train(&mut self, corpus: &[String]) -> Result<(), BackendError> {
        let ctx_len = self.order - 1;
        let mut counts: Vec<Vec<u64>> = Vec::new();
        for text in corpus {
            let mut toks = self.tokenize(text)?;
            toks.extend(self.eos);
            for w in toks.windows(ctx_len + 1) {
                let (ctx, next) = w.split_at(ctx_len);
                let next_row = self.contexts.len();
                let row = *self.contexts.entry(ctx.to_vec()).or_insert(next_row);
                if row == counts.len() {
                    counts.push(vec![0; self.vocab.len()]);
                }
                counts[row][next[0].0 as usize] += 1;
            }
        }
        self.rows = counts
            .into_iter()
            .map(|c| {
                let total: u64 = c.iter().sum();
                c.into_iter().map(|x| x as f64 / total as f64).collect()
            })
            .collect();
        Ok(())
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn lookup(&self, tokens: &[TokenId]) -> u64 {
        let ctx_len = self.order - 1;
        if tokens.len() < ctx_len {
            return NO_ROW;
        }
        self.contexts
            .get(&tokens[tokens.len() - ctx_len..])
            .map_or(NO_ROW, |&r| r as u64)
    }
}

impl ModelBackend for ToyLm {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            backend_id: format!("toy:{}", self.name),
            vocabulary_size: self.vocab.len() as u64,
            supports_full_distribution: true,
            top_logprobs_limit: None,
        }
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, BackendError> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut out = Vec::new();
        let mut i = 0;
        'outer: while i < chars.len() {
            let start = chars[i].0;
            let longest = self.max_piece_chars.min(chars.len() - i);
            for n in (1..=longest).rev() {
                let end = chars.get(i + n).map_or(text.len(), |c| c.0);
                if let Some(&id) = self.index.get(&text[start..end]) {
                    out.push(id);
                    i += n;
                    continue 'outer;
                }
            }
            return Err(BackendError::UnknownToken(chars[i].1.to_string()));
        }
        Ok(out)
    }

    fn decode(&self, tokens: &[TokenId]) -> Result<String, BackendError> {
        tokens
            .iter()
            .map(|t| {
                self.vocab
                    .get(t.0 as usize)
                    .map(String::as_str)
                    .ok_or_else(|| BackendError::UnknownToken(format!("id {}", t.0)))
            })
            .collect()
    }

    fn eos_token(&self) -> Option<TokenId> {
        self.eos
    }

    fn extend(&self, state: &mut GenerationState, tokens: &[TokenId]) -> Result<(), BackendError> {
        let mut window: Vec<TokenId> = state
            .tokens()
            .iter()
            .rev()
            .take(self.order - 2)
            .rev()
            .copied()
            .collect();
        for &t in tokens {
            if t.0 as usize >= self.vocab.len() {
                return Err(BackendError::UnknownToken(format!("id {}", t.0)));
            }
            window.push(t);
            if window.len() > self.order - 1 {
                window.remove(0);
            }
            state.push(t, CacheCell([self.lookup(&window), 0]));
        }
        Ok(())
    }

    fn next_distribution(&self, state: &GenerationState) -> Result<Distribution, BackendError> {
        match state.last_cell() {
            Some(CacheCell([row, _])) if row != NO_ROW => {
                Distribution::dense(&self.rows[row as usize])
            }
            _ => {
                let u = 1.0 / self.vocab.len() as f64;
                Distribution::dense(&vec![u; self.vocab.len()])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{validate_target_set, TraceError};

    #[test]
    fn uniform_fallback_on_unseen_context() {
        let lm = ToyLm::new(&ToyLmSpec {
            order: 3,
            vocab: Some(vec!["A".into(), "B".into(), "C".into(), "D".into()]),
            corpus: vec!["ABAB".into()],
            eos: false,
            ..Default::default()
        })
        .unwrap();
        let target = validate_target_set(&["A", "B", "C", "D"], &lm).unwrap();
        let mut state = lm.start("DD", 0).unwrap();
        let d = lm.next_distribution(&state).unwrap();
        let row = d.project(&target).unwrap();
        assert_eq!(row.row.probs(), &[0.25, 0.25, 0.25, 0.25]);
        // seen context "AB" -> always "A"
        lm.extend(&mut state, &lm.tokenize("AB").unwrap()).unwrap();
        let row = lm
            .next_distribution(&state)
            .unwrap()
            .project(&target)
            .unwrap();
        assert_eq!(row.row.probs(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn longest_match_tokenization() {
        let lm = ToyLm::new(&ToyLmSpec {
            order: 3,
            pieces: vec!["carbon".into(), "ated".into()],
            corpus: vec!["Water is carbonated.".into()],
            ..Default::default()
        })
        .unwrap();
        let toks = lm.tokenize("carbonated").unwrap();
        assert_eq!(toks.len(), 2);
        assert_eq!(lm.decode(&toks).unwrap(), "carbonated");
        assert!(matches!(
            validate_target_set(&["carbonated"], &lm),
            Err(TraceError::MultiTokenLabel { pieces: 2, .. })
        ));
        assert!(matches!(
            lm.tokenize("é"),
            Err(BackendError::UnknownToken(_))
        ));
        assert!(matches!(
            validate_target_set(&["é"], &lm),
            Err(TraceError::UnknownToken(_))
        ));
    }

    #[test]
    fn cache_cells_track_context_rows() {
        let lm = ToyLm::new(&ToyLmSpec {
            corpus: vec!["abcabd".into()],
            ..Default::default()
        })
        .unwrap();
        let mut state = lm.start("ab", 0).unwrap();
        assert_eq!(state.cache().len(), state.tokens().len());
        let d = lm.next_distribution(&state).unwrap();
        let c = lm.tokenize("c").unwrap()[0];
        let dd = lm.tokenize("d").unwrap()[0];
        assert_eq!(d.prob(c), Some(0.5));
        assert_eq!(d.prob(dd), Some(0.5));
        let before = state.clone();
        lm.extend(&mut state, &lm.tokenize("zz").unwrap()).unwrap();
        state.truncate(before.len());
        assert_eq!(state, before);
    }
}
