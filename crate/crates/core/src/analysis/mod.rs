//! Trace-level statistics: early answering, CoP score, CoT effect, TAFCR and
//! decile curves. General-purpose statistics live in [`stats`].

mod stats;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{argmax_row, step_predictions, ProbeTrace};

pub use stats::{gaussian_kernel, gaussian_smooth, paired_t_test, pearson, TTest};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("empty input")]
    EmptyInput,
    #[error("trace {0} has no gold label")]
    MissingGold(String),
    #[error("no record has a correct final answer")]
    NoTrueAnswers,
    #[error("need at least {needed} items, got {found}")]
    TooFewItems { needed: usize, found: usize },
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
}

/// True iff every row's argmax equals the final prediction, row 0 included.
pub fn is_early_answering(trace: &ProbeTrace) -> bool {
    let j_star = trace.final_prediction();
    step_predictions(trace.matrix())
        .iter()
        .all(|&j| j == j_star)
}

/// Early answering ratio.
pub fn ear(traces: &[ProbeTrace]) -> Result<f64, AnalysisError> {
    if traces.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let n = traces.iter().filter(|t| is_early_answering(t)).count();
    Ok(n as f64 / traces.len() as f64)
}

/// Accuracy over early-answering and other traces. Empty subsets give `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracySplit {
    pub acc_ea: Option<f64>,
    pub acc_not_ea: Option<f64>,
    pub n_ea: usize,
    pub n_not_ea: usize,
}

pub fn accuracy_split(traces: &[ProbeTrace]) -> Result<AccuracySplit, AnalysisError> {
    let (mut n_ea, mut c_ea, mut n_not, mut c_not) = (0usize, 0usize, 0usize, 0usize);
    for t in traces {
        let correct = t
            .is_correct()
            .ok_or_else(|| AnalysisError::MissingGold(t.question_id().to_string()))?;
        if is_early_answering(t) {
            n_ea += 1;
            c_ea += usize::from(correct);
        } else {
            n_not += 1;
            c_not += usize::from(correct);
        }
    }
    let ratio = |c: usize, n: usize| (n > 0).then(|| c as f64 / n as f64);
    Ok(AccuracySplit {
        acc_ea: ratio(c_ea, n_ea),
        acc_not_ea: ratio(c_not, n_not),
        n_ea,
        n_not_ea: n_not,
    })
}

/// CoP score of a confidence column `p_0..p_k`: mean confidence plus the mean
/// per-step change `(p_k - p_0) / k`. A single-entry column scores `p_0`.
pub fn cop_score_column(column: &[f64]) -> f64 {
    match column {
        [] => f64::NAN,
        [p0] => *p0,
        _ => {
            let k = column.len() - 1;
            let mean = column.iter().sum::<f64>() / column.len() as f64;
            mean + (column[k] - column[0]) / k as f64
        }
    }
}

/// CoP score on the final prediction's column.
pub fn cop_score(trace: &ProbeTrace) -> f64 {
    cop_score_column(&trace.final_column())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CotEffect {
    Positive,
    Negative,
    Neutral,
}

impl CotEffect {
    pub fn as_str(self) -> &'static str {
        match self {
            CotEffect::Positive => "positive",
            CotEffect::Negative => "negative",
            CotEffect::Neutral => "neutral",
        }
    }
}

/// Whether reasoning turned the initial (row 0) answer from wrong to right,
/// right to wrong, or neither.
pub fn cot_effect(trace: &ProbeTrace) -> Result<CotEffect, AnalysisError> {
    let gold = trace
        .gold()
        .ok_or_else(|| AnalysisError::MissingGold(trace.question_id().to_string()))?;
    let initial_right = argmax_row(trace.matrix().row(0)) == gold;
    let final_right = trace.final_prediction() == gold;
    Ok(match (initial_right, final_right) {
        (false, true) => CotEffect::Positive,
        (true, false) => CotEffect::Negative,
        _ => CotEffect::Neutral,
    })
}

/// External correctness judgement for one response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRecord {
    pub question_id: String,
    pub answer_correct: bool,
    pub cot_correct: bool,
}

/// Share of correct final answers whose reasoning was judged wrong.
pub fn tafcr(records: &[JudgeRecord]) -> Result<f64, AnalysisError> {
    let ta = records.iter().filter(|r| r.answer_correct).count();
    if ta == 0 {
        return Err(AnalysisError::NoTrueAnswers);
    }
    let fc = records
        .iter()
        .filter(|r| r.answer_correct && !r.cot_correct)
        .count();
    Ok(fc as f64 / ta as f64)
}

pub const DECILE_SECTIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecilePoint {
    pub mean_score: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// Section sizes for splitting `n` sorted items into `parts` contiguous
/// groups; the first `n % parts` groups get one extra item.
pub fn section_sizes(n: usize, parts: usize) -> Vec<usize> {
    let (q, r) = (n / parts, n % parts);
    (0..parts).map(|i| q + usize::from(i < r)).collect()
}

/// Sorts by score and reports per-section mean score and accuracy.
pub fn decile_curve(scored: &[(f64, bool)]) -> Result<Vec<DecilePoint>, AnalysisError> {
    if scored.len() < DECILE_SECTIONS {
        return Err(AnalysisError::TooFewItems {
            needed: DECILE_SECTIONS,
            found: scored.len(),
        });
    }
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::with_capacity(DECILE_SECTIONS);
    let mut start = 0;
    for size in section_sizes(sorted.len(), DECILE_SECTIONS) {
        let sec = &sorted[start..start + size];
        start += size;
        out.push(DecilePoint {
            mean_score: sec.iter().map(|s| s.0).sum::<f64>() / size as f64,
            accuracy: sec.iter().filter(|s| s.1).count() as f64 / size as f64,
            count: size,
        });
    }
    Ok(out)
}
