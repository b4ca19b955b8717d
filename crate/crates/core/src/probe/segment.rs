use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::trace::DecodeConfig;

/// Characters that may sit between a terminator and the following space,
/// as in `(C).` or `"Done."`.
const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];

/// Sentence boundary rule shared by step decoding and [`segment_steps`].
///
/// A boundary falls right after the first whitespace character following a
/// terminator (optionally followed by closing quotes or brackets), unless the
/// text up to the terminator ends with a guarded abbreviation. Decimal points
/// never qualify because a digit, not whitespace, follows them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStopRule {
    pub terminators: BTreeSet<char>,
    pub abbreviation_guards: Vec<String>,
    pub max_tokens_per_step: usize,
}

impl Default for StepStopRule {
    fn default() -> Self {
        Self {
            terminators: ['.', '!', '?'].into_iter().collect(),
            abbreviation_guards: ["e.g.", "i.e.", "Dr.", "Mr.", "Mrs.", "Ms.", "vs.", "St."]
                .into_iter()
                .map(String::from)
                .collect(),
            max_tokens_per_step: DecodeConfig::DEFAULT_MAX_TOKENS_PER_STEP,
        }
    }
}

impl StepStopRule {
    pub fn with_budget(mut self, max_tokens_per_step: usize) -> Self {
        self.max_tokens_per_step = max_tokens_per_step;
        self
    }

    fn guarded(&self, head: &str) -> bool {
        self.abbreviation_guards.iter().any(|g| {
            let n = g.len();
            if head.len() < n || !head.is_char_boundary(head.len() - n) {
                return false;
            }
            let (before, tail) = head.split_at(head.len() - n);
            tail.eq_ignore_ascii_case(g)
                && before
                    .chars()
                    .next_back()
                    .is_none_or(|c| !c.is_alphanumeric())
        })
    }

    /// Byte offset of the first boundary whose whitespace character starts at
    /// or after `from`, scanning back far enough to see the terminator.
    pub fn boundary_after(&self, text: &str, from: usize) -> Option<usize> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let start = chars.partition_point(|&(i, _)| i < from);
        for k in start..chars.len() {
            let (ws_at, ws) = chars[k];
            if !ws.is_whitespace() || k == 0 {
                continue;
            }
            let mut j = k - 1;
            while j > 0 && CLOSERS.contains(&chars[j].1) {
                j -= 1;
            }
            let (t_at, t) = chars[j];
            if !self.terminators.contains(&t) {
                continue;
            }
            if self.guarded(&text[..t_at + t.len_utf8()]) {
                continue;
            }
            return Some(ws_at + ws.len_utf8());
        }
        None
    }
}

/// Splits reasoning text into steps. Concatenating the result reproduces the
/// input exactly.
pub fn segment_steps(text: &str, rule: &StepStopRule) -> Vec<String> {
    let mut steps = Vec::new();
    let mut start = 0;
    while start < text.len() {
        let rest = &text[start..];
        match rule.boundary_after(rest, 0) {
            Some(end) if end < rest.len() => {
                steps.push(rest[..end].to_string());
                start += end;
            }
            _ => {
                steps.push(rest.to_string());
                break;
            }
        }
    }
    steps
}
