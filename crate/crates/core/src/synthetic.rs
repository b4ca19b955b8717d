//! Controlled scripted populations for end-to-end studies.
//!
//! Every question gets several scripted reasoning variants of three steps
//! plus an answer sentence. Each variant's confidence column on its own
//! answer rises steadily to a level `u`, so its CoP score is a fixed function
//! of `u`. Correctness is then assigned so that, among variants with similar
//! scores, the fraction answering correctly equals `clamp(score, 0, 1)`:
//! variants are ranked by score and the running sum of scores decides which
//! ones are correct (each run of consecutive variants holds
//! `sum of scores ± 1` correct ones). Wrong variants all pick one distractor
//! label, which makes the distractor a frequent plurality.
//!
//! A companion "census" script holds every variant as its own question, so a
//! greedy run reproduces any single variant exactly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::cop_score_column;
use crate::backend::{BackendError, ScriptedBackend, ScriptedBuilder};
use crate::io::{Choice, DatasetRecord};
use crate::probe::{build_prompt, PromptSpec};
use crate::trace::{DecodeConfig, DecodeMode};

pub const LABELS: [&str; 4] = ["A", "B", "C", "D"];

/// Rise of the answer's confidence over the five probes (c_0..c_4).
const RAMP: [f64; 5] = [-0.12, -0.08, -0.05, -0.02, 0.0];
/// Probability mass per row assigned to the labels; the rest goes to other tokens.
const LABEL_MASS: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationSpec {
    pub questions: usize,
    pub variants: usize,
    pub seed: u64,
    /// Range of the final confidence level `u`.
    pub level_range: (f64, f64),
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            questions: 40,
            variants: 6,
            seed: 7,
            level_range: (0.15, 0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantInfo {
    pub question: usize,
    pub variant: u32,
    pub column: Vec<f64>,
    pub score: f64,
    pub label: usize,
    pub correct: bool,
}

#[derive(Debug, Clone)]
pub struct Population {
    pub spec: PopulationSpec,
    pub records: Vec<DatasetRecord>,
    pub variants: Vec<VariantInfo>,
    script: ScriptedBuilder,
    census: ScriptedBuilder,
}

/// Probability that a variant with this score is correct.
pub fn correctness_probability(score: f64) -> f64 {
    score.clamp(0.0, 1.0)
}

fn question_text(q: usize) -> String {
    format!("Synthetic question {q}: which option holds?")
}

pub fn census_key(q: usize, v: u32) -> String {
    format!("Census item {q}/{v}:")
}

fn steps(v: u32, label: &str) -> Vec<String> {
    vec![
        format!("Option check {v} begins. "),
        format!("Evidence line {v} is weighed. "),
        format!("Remaining options {v} are ruled out. "),
        format!("So, the answer is ({label})."),
    ]
}

fn rows(column: &[f64], label: usize) -> Vec<Vec<(String, f64)>> {
    column
        .iter()
        .map(|&p| {
            let rest = (LABEL_MASS - p) / 3.0;
            LABELS
                .iter()
                .enumerate()
                .map(|(j, l)| (l.to_string(), if j == label { p } else { rest }))
                .collect()
        })
        .collect()
}

impl Population {
    pub fn new(spec: PopulationSpec) -> Self {
        let n = spec.questions * spec.variants;
        let (lo, hi) = spec.level_range;
        let mut levels: Vec<f64> = (0..n)
            .map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64)
            .collect();
        levels.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));

        let mut variants: Vec<VariantInfo> = levels
            .iter()
            .enumerate()
            .map(|(i, &u)| {
                let column: Vec<f64> = RAMP.iter().map(|r| u + r).collect();
                VariantInfo {
                    question: i / spec.variants,
                    variant: (i % spec.variants) as u32,
                    score: cop_score_column(&column),
                    column,
                    label: 0,
                    correct: false,
                }
            })
            .collect();

        // running-sum assignment along the score order
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| variants[a].score.total_cmp(&variants[b].score));
        let mut acc = 0.0f64;
        for &i in &order {
            let before = acc.floor();
            acc += correctness_probability(variants[i].score);
            variants[i].correct = acc.floor() > before;
        }

        let mut script = ScriptedBuilder::new().name("synthetic");
        let mut census = ScriptedBuilder::new().name("synthetic-census");
        let mut records = Vec::with_capacity(spec.questions);
        for q in 0..spec.questions {
            let gold = q % LABELS.len();
            let distractor = (q + 1) % LABELS.len();
            records.push(DatasetRecord {
                id: format!("syn-{q:03}"),
                question: question_text(q),
                choices: LABELS
                    .iter()
                    .map(|l| Choice {
                        label: l.to_string(),
                        text: format!("option {l}"),
                    })
                    .collect(),
                answer_label: LABELS[gold].to_string(),
                metadata: [("group".to_string(), serde_json::json!(q % 5))]
                    .into_iter()
                    .collect(),
            });
            for v in variants.iter_mut().filter(|v| v.question == q) {
                v.label = if v.correct { gold } else { distractor };
                let st = steps(v.variant, LABELS[v.label]);
                let pr = rows(&v.column, v.label);
                script.add_variant(&question_text(q), v.variant, 1.0, &st, &pr);
                census.add_variant(&census_key(q, v.variant), 0, 1.0, &st, &pr);
            }
        }
        Self {
            spec,
            records,
            variants,
            script,
            census,
        }
    }

    pub fn backend(&self) -> Result<ScriptedBackend, BackendError> {
        self.script.build()
    }

    pub fn census_backend(&self) -> Result<ScriptedBackend, BackendError> {
        self.census.build()
    }

    pub fn script(&self) -> &ScriptedBuilder {
        &self.script
    }

    pub fn prompt(&self, q: usize) -> String {
        build_prompt(&PromptSpec::default().with_question(self.records[q].render()))
    }

    pub fn census_prompt(&self, q: usize, v: u32) -> String {
        build_prompt(&PromptSpec::default().with_question(census_key(q, v)))
    }

    pub fn gold(&self, q: usize) -> usize {
        q % LABELS.len()
    }

    /// Plain weight-proportional sampling, so every variant of a question is
    /// drawn with equal probability.
    pub fn sampling_config(seed: u64) -> DecodeConfig {
        DecodeConfig {
            mode: DecodeMode::Sample,
            temperature: 1.0,
            top_k: 0,
            top_p: 1.0,
            seed,
            ..DecodeConfig::greedy()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correct_share_tracks_score() {
        let pop = Population::new(PopulationSpec::default());
        let n = pop.variants.len() as f64;
        let correct = pop.variants.iter().filter(|v| v.correct).count() as f64;
        let expected: f64 = pop
            .variants
            .iter()
            .map(|v| correctness_probability(v.score))
            .sum();
        assert!((correct - expected).abs() <= 1.0);
        assert!(correct / n > 0.3 && correct / n < 0.7);
        let scores: Vec<f64> = pop.variants.iter().map(|v| v.score).collect();
        assert!(scores.iter().all(|s| (0.0..1.0).contains(s)));
    }

    #[test]
    fn scripts_build() {
        let pop = Population::new(PopulationSpec {
            questions: 3,
            variants: 2,
            ..Default::default()
        });
        assert_eq!(pop.backend().unwrap().question_keys().count(), 3);
        assert_eq!(pop.census_backend().unwrap().question_keys().count(), 6);
        assert!(pop
            .prompt(1)
            .contains("Synthetic question 1: which option holds?"));
    }
}
