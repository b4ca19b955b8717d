//! Answer production strategies: greedy decoding, majority vote over k
//! samples, and highest-CoP-score selection over k samples.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::cop_score;
use crate::exec::Execution;
use crate::probe::{ProbeError, ProbeSession};
use crate::trace::{DecodeConfig, DecodeMode, ProbeTrace};

fn argmax_first(scores: impl IntoIterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|b| b.0)
}

/// Index of the trace chosen by majority vote over final predictions.
///
/// The chosen trace carries a label with the maximal vote count; among all
/// such traces the one with the highest CoP score wins, earliest on ties.
pub fn majority_vote(candidates: &[ProbeTrace]) -> Option<usize> {
    let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
    for t in candidates {
        *votes.entry(t.final_prediction()).or_default() += 1;
    }
    let top = *votes.values().max()?;
    argmax_first(
        candidates
            .iter()
            .enumerate()
            .filter(|(_, t)| votes[&t.final_prediction()] == top)
            .map(|(i, t)| (i, cop_score(t))),
    )
}

/// Index of the highest-CoP-score trace, earliest on ties.
pub fn select_by_cops(candidates: &[ProbeTrace]) -> Option<usize> {
    argmax_first(
        candidates
            .iter()
            .enumerate()
            .map(|(i, t)| (i, cop_score(t))),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    Greedy,
    Majority,
    CopScore,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Greedy, Strategy::Majority, Strategy::CopScore];

    pub fn name(self, k: usize) -> String {
        match self {
            Strategy::Greedy => "GS".into(),
            Strategy::Majority => format!("Maj@{k}"),
            Strategy::CopScore => format!("CoPS@{k}"),
        }
    }
}

/// One question to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub question_id: String,
    pub prompt: String,
    pub gold: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub k: usize,
    pub exec: Execution,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: 5,
            exec: Execution::default(),
        }
    }
}

/// Per-question record of what each strategy picked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionDecision {
    pub question_id: String,
    pub gold: usize,
    pub greedy: usize,
    pub sample_predictions: Vec<usize>,
    pub sample_scores: Vec<f64>,
    pub majority_index: usize,
    pub majority: usize,
    pub cops_index: usize,
    pub cops: usize,
}

impl QuestionDecision {
    pub fn prediction(&self, s: Strategy) -> usize {
        match s {
            Strategy::Greedy => self.greedy,
            Strategy::Majority => self.majority,
            Strategy::CopScore => self.cops,
        }
    }

    /// Decision from an already computed greedy trace and samples.
    pub fn from_traces(greedy: &ProbeTrace, samples: &[ProbeTrace], gold: usize) -> Option<Self> {
        let majority_index = majority_vote(samples)?;
        let cops_index = select_by_cops(samples)?;
        Some(Self {
            question_id: greedy.question_id().to_string(),
            gold,
            greedy: greedy.final_prediction(),
            sample_predictions: samples.iter().map(ProbeTrace::final_prediction).collect(),
            sample_scores: samples.iter().map(cop_score).collect(),
            majority_index,
            majority: samples[majority_index].final_prediction(),
            cops_index,
            cops: samples[cops_index].final_prediction(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyAccuracy {
    pub strategy: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionRun {
    pub greedy: ProbeTrace,
    pub samples: Vec<ProbeTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyComparison {
    pub k: usize,
    pub rows: Vec<StrategyAccuracy>,
    pub decisions: Vec<QuestionDecision>,
    pub runs: Vec<QuestionRun>,
}

/// Accuracy of every strategy over the same decisions.
pub fn summarize(decisions: &[QuestionDecision], k: usize) -> Vec<StrategyAccuracy> {
    Strategy::ALL
        .iter()
        .map(|&s| {
            let correct = decisions
                .iter()
                .filter(|d| d.prediction(s) == d.gold)
                .count();
            let total = decisions.len();
            StrategyAccuracy {
                strategy: s.name(k),
                correct,
                total,
                accuracy: if total == 0 {
                    f64::NAN
                } else {
                    correct as f64 / total as f64
                },
            }
        })
        .collect()
}

/// Runs one greedy trace and `k` sampled traces (seeds `seed+1..=seed+k`) per
/// question and scores all three strategies on them.
pub fn evaluate_strategies(
    session: &ProbeSession<'_>,
    items: &[EvalItem],
    cfg: &DecodeConfig,
    opts: &EvalOptions,
) -> Result<StrategyComparison, ProbeError> {
    if opts.k == 0 {
        return Err(ProbeError::Contract("k must be at least 1".into()));
    }
    let greedy_cfg = cfg.with_mode(DecodeMode::Greedy);
    let sample_cfg = cfg.with_mode(DecodeMode::Sample);
    let results = opts.exec.try_map(items, |item| {
        let greedy = session.run_cop(
            &item.question_id,
            &item.prompt,
            &greedy_cfg,
            Some(item.gold),
        )?;
        let samples = (1..=opts.k as u64)
            .map(|i| {
                session.run_cop(
                    &item.question_id,
                    &item.prompt,
                    &sample_cfg.with_seed(cfg.seed.wrapping_add(i)),
                    Some(item.gold),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let decision =
            QuestionDecision::from_traces(&greedy, &samples, item.gold).expect("k >= 1 samples");
        Ok::<_, ProbeError>((decision, QuestionRun { greedy, samples }))
    })?;
    let (decisions, runs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(StrategyComparison {
        k: opts.k,
        rows: summarize(&decisions, opts.k),
        decisions,
        runs,
    })
}
