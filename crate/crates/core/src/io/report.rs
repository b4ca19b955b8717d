use std::path::Path;

use serde::Serialize;

use super::IoError;
use crate::analysis::{cop_score, AccuracySplit, CotEffect};
use crate::selection::{QuestionDecision, StrategyAccuracy};
use crate::trace::ProbeTrace;
use crate::tree::ClassificationMetrics;

/// Shortest representation that parses back to the same double.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Absent values become empty cells.
pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// A table with a fixed column order, written as CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Report {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Report {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), IoError> {
        use std::io::Write;
        let path = path.as_ref();
        let mut f = super::create(path)?;
        f.write_all(self.to_csv().as_bytes())
            .map_err(|e| IoError::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EarSummary {
    pub name: String,
    pub n: usize,
    pub n_ea: usize,
    pub ear: f64,
}

pub fn ear_report(rows: &[EarSummary]) -> Report {
    let mut r = Report::new(&["dataset", "n", "n_ea", "ear"]);
    for s in rows {
        r.push(vec![
            s.name.clone(),
            s.n.to_string(),
            s.n_ea.to_string(),
            fmt_f64(s.ear),
        ]);
    }
    r
}

pub fn accuracy_split_report(rows: &[(String, AccuracySplit)]) -> Report {
    let mut r = Report::new(&["dataset", "n_ea", "acc_ea", "n_not_ea", "acc_not_ea"]);
    for (name, s) in rows {
        r.push(vec![
            name.clone(),
            s.n_ea.to_string(),
            fmt_opt(s.acc_ea),
            s.n_not_ea.to_string(),
            fmt_opt(s.acc_not_ea),
        ]);
    }
    r
}

pub fn strategy_report(model: &str, rows: &[StrategyAccuracy]) -> Report {
    let mut r = Report::new(&["model", "strategy", "correct", "total", "accuracy"]);
    for s in rows {
        r.push(vec![
            model.to_string(),
            s.strategy.clone(),
            s.correct.to_string(),
            s.total.to_string(),
            fmt_f64(s.accuracy),
        ]);
    }
    r
}

pub fn decisions_report(decisions: &[QuestionDecision]) -> Report {
    let mut r = Report::new(&[
        "question_id",
        "gold",
        "greedy",
        "majority",
        "majority_index",
        "cops",
        "cops_index",
        "sample_predictions",
        "sample_scores",
    ]);
    let join = |xs: Vec<String>| xs.join(" ");
    for d in decisions {
        r.push(vec![
            d.question_id.clone(),
            d.gold.to_string(),
            d.greedy.to_string(),
            d.majority.to_string(),
            d.majority_index.to_string(),
            d.cops.to_string(),
            d.cops_index.to_string(),
            join(d.sample_predictions.iter().map(|p| p.to_string()).collect()),
            join(d.sample_scores.iter().map(|s| fmt_f64(*s)).collect()),
        ]);
    }
    r
}

/// `avg_samples` is the mean number of draws per question when the metrics
/// come from a resampling run.
pub fn tree_metrics_report(m: &ClassificationMetrics, avg_samples: Option<f64>) -> Report {
    let mut r = Report::new(&[
        "precision",
        "recall",
        "f1",
        "tp",
        "fp",
        "fn",
        "tn",
        "avg_samples",
    ]);
    r.push(vec![
        fmt_opt(m.precision),
        fmt_opt(m.recall),
        fmt_opt(m.f1),
        m.tp.to_string(),
        m.fp.to_string(),
        m.fn_.to_string(),
        m.tn.to_string(),
        fmt_opt(avg_samples),
    ]);
    r
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TafcrSummary {
    pub name: String,
    pub n: usize,
    pub true_answers: usize,
    pub true_answer_false_cot: usize,
    pub tafcr: f64,
}

pub fn tafcr_report(rows: &[TafcrSummary]) -> Report {
    let mut r = Report::new(&[
        "dataset",
        "n",
        "true_answers",
        "true_answer_false_cot",
        "tafcr",
    ]);
    for s in rows {
        r.push(vec![
            s.name.clone(),
            s.n.to_string(),
            s.true_answers.to_string(),
            s.true_answer_false_cot.to_string(),
            fmt_f64(s.tafcr),
        ]);
    }
    r
}

/// One row per trace with its effect, followed by nothing else; counts are
/// easy to derive downstream and keeping rows per trace keeps it auditable.
pub fn effect_report(rows: &[(String, CotEffect)]) -> Report {
    let mut r = Report::new(&["question_id", "effect"]);
    for (id, e) in rows {
        r.push(vec![id.clone(), e.as_str().to_string()]);
    }
    r
}

pub fn scores_report(traces: &[ProbeTrace]) -> Report {
    let mut r = Report::new(&[
        "question_id",
        "steps",
        "final_prediction",
        "gold",
        "correct",
        "cop_score",
        "degenerate",
    ]);
    for t in traces {
        r.push(vec![
            t.question_id().to_string(),
            t.step_count().to_string(),
            t.final_prediction().to_string(),
            t.gold().map(|g| g.to_string()).unwrap_or_default(),
            t.is_correct().map(|c| c.to_string()).unwrap_or_default(),
            fmt_f64(cop_score(t)),
            (t.step_count() == 0).to_string(),
        ]);
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_shape_and_determinism() {
        let rows = vec![
            StrategyAccuracy {
                strategy: "GS".into(),
                correct: 1,
                total: 2,
                accuracy: 0.5,
            },
            StrategyAccuracy {
                strategy: "Maj@5".into(),
                correct: 2,
                total: 2,
                accuracy: 1.0,
            },
            StrategyAccuracy {
                strategy: "CoPS@5".into(),
                correct: 2,
                total: 2,
                accuracy: 1.0,
            },
        ];
        let a = strategy_report("toy", &rows).to_csv();
        assert_eq!(a.lines().count(), 4);
        assert_eq!(
            a.lines().next().unwrap(),
            "model,strategy,correct,total,accuracy"
        );
        assert_eq!(a, strategy_report("toy", &rows).to_csv());
        let e = ear_report(&[
            EarSummary {
                name: "x".into(),
                n: 4,
                n_ea: 2,
                ear: 0.5,
            },
            EarSummary {
                name: "y".into(),
                n: 3,
                n_ea: 3,
                ear: 1.0,
            },
        ]);
        assert_eq!(e.to_csv(), "dataset,n,n_ea,ear\nx,4,2,0.5\ny,3,3,1\n");
    }

    #[test]
    fn absent_values_are_empty_cells() {
        let s = AccuracySplit {
            acc_ea: Some(0.25),
            acc_not_ea: None,
            n_ea: 4,
            n_not_ea: 0,
        };
        let csv = accuracy_split_report(&[("d".into(), s)]).to_csv();
        assert!(csv.ends_with("d,4,0.25,0,\n"));
    }
}
