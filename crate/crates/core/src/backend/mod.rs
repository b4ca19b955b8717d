//! Model access: the generation/probing contract and its implementations.
//!
//! A [`GenerationState`] holds the consumed tokens, one opaque cache cell per
//! token and the decoding RNG. Probing appends the probe tokens' cells, reads
//! the next-token distribution, then truncates back to the step boundary, so
//! the state after a probe is identical to the state before it.

mod remote;
pub mod sampling;
mod scripted;
mod toy;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probe::StepStopRule;
use crate::trace::{ConfidenceRow, DecodeConfig, TargetTokenSet, TokenId, TraceError};

pub use remote::{
    parse_top_logprobs, RemoteBackend, RemoteConfig, RemoteProbeRequest, RetryPolicy, TokenLogprob,
};
pub use scripted::{ScriptRecord, ScriptedBackend, ScriptedBuilder};
pub use toy::{ToyLm, ToyLmSpec};

/// Probability assigned to target labels missing from a top-N response.
pub const PARTIAL_FLOOR: f64 = 1e-6;

const DIST_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("script parse error at line {line}: {message}")]
    ScriptParse { line: usize, message: String },
    #[error("no scripted entry for context {0:?}")]
    ScriptMiss(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("unknown token in {0:?}")]
    UnknownToken(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Opaque per-token cache entry. Backends decide what the two words mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct CacheCell(pub [u64; 2]);

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationState {
    tokens: Vec<TokenId>,
    cache: Vec<CacheCell>,
    rng: ChaCha8Rng,
}

impl GenerationState {
    /// Empty state whose RNG stream depends on both the seed and the prompt,
    /// so equal seeds on different questions give independent streams.
    pub fn seeded(seed: u64, prompt: &str) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in prompt.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&h.to_le_bytes());
        Self {
            tokens: Vec::new(),
            cache: Vec::new(),
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn cache(&self) -> &[CacheCell] {
        &self.cache
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn last_cell(&self) -> Option<CacheCell> {
        self.cache.last().copied()
    }

    pub fn push(&mut self, token: TokenId, cell: CacheCell) {
        self.tokens.push(token);
        self.cache.push(cell);
    }

    /// Drops the suffix beyond `len`. Never grows the state.
    pub fn truncate(&mut self, len: usize) {
        self.tokens.truncate(len);
        self.cache.truncate(len);
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub backend_id: String,
    pub vocabulary_size: u64,
    pub supports_full_distribution: bool,
    /// Present iff the backend only reports the top-N tokens.
    pub top_logprobs_limit: Option<u32>,
}

/// Next-token probabilities, sorted by token id.
///
/// When `complete` is set, tokens not listed have probability zero. Otherwise
/// the listing is a top-N excerpt and omitted tokens are unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    entries: Vec<(TokenId, f64)>,
    complete: bool,
}

impl Distribution {
    pub fn new(mut entries: Vec<(TokenId, f64)>, complete: bool) -> Result<Self, BackendError> {
        entries.sort_by_key(|e| e.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(BackendError::InvalidDistribution("duplicate token".into()));
        }
        if let Some((t, p)) = entries.iter().find(|(_, p)| !(*p >= 0.0 && *p <= 1.0)) {
            return Err(BackendError::InvalidDistribution(format!(
                "token {} has probability {p}",
                t.0
            )));
        }
        let sum: f64 = entries.iter().map(|e| e.1).sum();
        if sum > 1.0 + DIST_SUM_TOLERANCE || (complete && (sum - 1.0).abs() > DIST_SUM_TOLERANCE) {
            return Err(BackendError::InvalidDistribution(format!(
                "mass sums to {sum}"
            )));
        }
        Ok(Self { entries, complete })
    }

    /// Dense vector over a vocabulary `0..probs.len()`.
    pub fn dense(probs: &[f64]) -> Result<Self, BackendError> {
        let entries = probs
            .iter()
            .enumerate()
            .map(|(i, &p)| (TokenId(i as u32), p))
            .collect();
        Self::new(entries, true)
    }

    pub fn entries(&self) -> &[(TokenId, f64)] {
        &self.entries
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    /// `Some(0.0)` for unlisted tokens of a complete distribution, `None` when unknown.
    pub fn prob(&self, token: TokenId) -> Option<f64> {
        match self.entries.binary_search_by_key(&token, |e| e.0) {
            Ok(i) => Some(self.entries[i].1),
            Err(_) if self.complete => Some(0.0),
            Err(_) => None,
        }
    }

    /// Projects the distribution onto the target labels.
    ///
    /// Labels missing from a top-N listing receive [`PARTIAL_FLOOR`] (shrunk
    /// if needed to keep the row sum within 1) and are reported back.
    pub fn project(&self, target: &TargetTokenSet) -> Result<ProbeRow, TraceError> {
        let mut probs = Vec::with_capacity(target.len());
        let mut missing = Vec::new();
        for e in target.entries() {
            match self.prob(e.token) {
                Some(p) => probs.push(p),
                None => {
                    missing.push(e.label.clone());
                    probs.push(f64::NAN);
                }
            }
        }
        if !missing.is_empty() {
            let known: f64 = probs.iter().filter(|p| !p.is_nan()).sum();
            let room = ((1.0 - known) / missing.len() as f64).max(0.0);
            let floor = PARTIAL_FLOOR.min(room);
            for p in probs.iter_mut().filter(|p| p.is_nan()) {
                *p = floor;
            }
        }
        Ok(ProbeRow {
            row: ConfidenceRow::new(probs)?,
            missing_labels: missing,
        })
    }
}

/// A probe result. `missing_labels` is non-empty when the floor path was used.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub row: ConfidenceRow,
    pub missing_labels: Vec<String>,
}

impl ProbeRow {
    pub fn is_partial(&self) -> bool {
        !self.missing_labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedStep {
    pub text: String,
    /// The model emitted end-of-sequence.
    pub finished: bool,
    /// The token budget ran out before a sentence terminator.
    pub budget_exceeded: bool,
}

/// Model access contract.
///
/// Implementors provide tokenization, state extension and next-token
/// distributions; probing and step decoding have default implementations on
/// top of those. Implementations must be usable from several threads at once
/// as long as each thread drives its own [`GenerationState`].
pub trait ModelBackend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, BackendError>;

    fn decode(&self, tokens: &[TokenId]) -> Result<String, BackendError>;

    fn eos_token(&self) -> Option<TokenId>;

    /// Tokenization used when resolving answer labels.
    fn label_tokens(&self, label: &str) -> Result<Vec<TokenId>, BackendError> {
        self.tokenize(label)
    }

    /// Fresh state that has consumed the prompt.
    fn start(&self, prompt: &str, seed: u64) -> Result<GenerationState, BackendError> {
        let mut state = GenerationState::seeded(seed, prompt);
        let tokens = self.tokenize(prompt)?;
        self.extend(&mut state, &tokens)?;
        Ok(state)
    }

    /// Appends tokens and their cache cells.
    fn extend(&self, state: &mut GenerationState, tokens: &[TokenId]) -> Result<(), BackendError>;

    /// Next-token distribution. Must not change the state.
    fn next_distribution(&self, state: &GenerationState) -> Result<Distribution, BackendError>;

    /// Confidence row for the target labels after appending `probe_tokens`.
    ///
    /// The probe cells are removed again before returning, on success and on
    /// failure alike.
    fn probe_distribution(
        &self,
        state: &mut GenerationState,
        probe_tokens: &[TokenId],
        target: &TargetTokenSet,
    ) -> Result<ProbeRow, BackendError> {
        let mark = state.len();
        let result = self
            .extend(state, probe_tokens)
            .and_then(|_| self.next_distribution(state));
        state.truncate(mark);
        result?.project(target).map_err(|e| match e {
            TraceError::Backend(b) => b,
            other => BackendError::InvalidDistribution(other.to_string()),
        })
    }

    /// Decodes one sentence-sized step.
    fn generate_step(
        &self,
        state: &mut GenerationState,
        cfg: &DecodeConfig,
        stop: &StepStopRule,
    ) -> Result<GeneratedStep, BackendError> {
        let eos = self.eos_token();
        let mut text = String::new();
        let mut emitted = 0;
        loop {
            if emitted >= stop.max_tokens_per_step {
                return Ok(GeneratedStep {
                    text,
                    finished: false,
                    budget_exceeded: true,
                });
            }
            let dist = self.next_distribution(state)?;
            let token = sampling::choose_token(&dist, cfg, state.rng_mut())?;
            if Some(token) == eos {
                return Ok(GeneratedStep {
                    text,
                    finished: true,
                    budget_exceeded: false,
                });
            }
            self.extend(state, &[token])?;
            let scan_from = text.len();
            text.push_str(&self.decode(&[token])?);
            emitted += 1;
            if stop.boundary_after(&text, scan_from).is_some() {
                return Ok(GeneratedStep {
                    text,
                    finished: false,
                    budget_exceeded: false,
                });
            }
        }
    }
}
