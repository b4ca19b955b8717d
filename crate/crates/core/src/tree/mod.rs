//! Reasoning gate: confidence features, a small CART classifier over them,
//! and resampling until the classifier accepts a response.

mod cart;
mod resample;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probe::ProbeError;
use crate::trace::ProbeTrace;

pub use cart::{train_tree, TreeOptions, DEFAULT_MAX_LEAVES};
pub use resample::{resample_until_accept, ResampleOutcome};

pub const TREE_FORMAT: &str = "cop-tree";
pub const TREE_VERSION: u32 = 1;
/// Feature order of [`CopFeatures::as_array`] and of split indices.
pub const FEATURE_ORDER: [&str; 3] = ["f_min_delta", "f_min", "f_max"];

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("need at least 2 training samples, got {0}")]
    TooFewSamples(usize),
    #[error("training samples contain a single class")]
    SingleClass,
    #[error("{0} predictions but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("unsupported tree file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("invalid tree: {0}")]
    Invalid(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Correct,
    Incorrect,
}

impl Verdict {
    pub fn from_bool(correct: bool) -> Self {
        if correct {
            Verdict::Correct
        } else {
            Verdict::Incorrect
        }
    }

    pub fn is_correct(self) -> bool {
        self == Verdict::Correct
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Correct => "correct",
            Verdict::Incorrect => "incorrect",
        }
    }
}

/// Confidence features on the final prediction's column `p_0..p_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopFeatures {
    /// max(p_1..p_k)
    pub f_max: f64,
    /// min(p_1..p_k)
    pub f_min: f64,
    /// min over i >= 1 of p_i - p_{i-1}
    pub f_min_delta: f64,
    /// Set for k = 0, where the features default to (p_0, p_0, 0).
    #[serde(default)]
    pub degenerate: bool,
}

impl CopFeatures {
    pub fn as_array(&self) -> [f64; 3] {
        [self.f_min_delta, self.f_min, self.f_max]
    }

    pub fn from_column(column: &[f64]) -> Self {
        match column {
            [] => Self {
                f_max: 0.0,
                f_min: 0.0,
                f_min_delta: 0.0,
                degenerate: true,
            },
            [p0] => Self {
                f_max: *p0,
                f_min: *p0,
                f_min_delta: 0.0,
                degenerate: true,
            },
            _ => {
                let tail = &column[1..];
                Self {
                    f_max: tail.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    f_min: tail.iter().copied().fold(f64::INFINITY, f64::min),
                    f_min_delta: column
                        .windows(2)
                        .map(|w| w[1] - w[0])
                        .fold(f64::INFINITY, f64::min),
                    degenerate: false,
                }
            }
        }
    }
}

pub fn extract_features(trace: &ProbeTrace) -> CopFeatures {
    CopFeatures::from_column(&trace.final_column())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        label: Verdict,
        correct: usize,
        incorrect: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub sample_count: usize,
    pub impurity: String,
    pub max_leaves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopTree {
    format: String,
    version: u32,
    feature_order: Vec<String>,
    nodes: Vec<Node>,
    training: TrainingMeta,
}

impl CopTree {
    fn from_parts(nodes: Vec<Node>, training: TrainingMeta) -> Self {
        Self {
            format: TREE_FORMAT.into(),
            version: TREE_VERSION,
            feature_order: FEATURE_ORDER.iter().map(|s| s.to_string()).collect(),
            nodes,
            training,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn training(&self) -> &TrainingMeta {
        &self.training
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Index of the leaf reached by `features`.
    pub fn leaf_index(&self, features: &CopFeatures) -> usize {
        let x = features.as_array();
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn classify(&self, features: &CopFeatures) -> Verdict {
        match self.nodes[self.leaf_index(features)] {
            Node::Leaf { label, .. } => label,
            Node::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    fn validate(&self) -> Result<(), TreeError> {
        if self.format != TREE_FORMAT {
            return Err(TreeError::Invalid(format!("format tag {:?}", self.format)));
        }
        if self.version != TREE_VERSION {
            return Err(TreeError::VersionMismatch {
                found: self.version,
                expected: TREE_VERSION,
            });
        }
        if self.feature_order != FEATURE_ORDER {
            return Err(TreeError::Invalid(format!(
                "feature order {:?}",
                self.feature_order
            )));
        }
        if self.nodes.is_empty() {
            return Err(TreeError::Invalid("no nodes".into()));
        }
        // children must point forward, which rules out cycles and shared nodes
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if let Node::Split {
                feature,
                threshold,
                left,
                right,
            } = *n
            {
                if feature >= FEATURE_ORDER.len() || !threshold.is_finite() {
                    return Err(TreeError::Invalid(format!("node {i} has a bad split")));
                }
                for c in [left, right] {
                    if c <= i || c >= self.nodes.len() {
                        return Err(TreeError::Invalid(format!("node {i} has child {c}")));
                    }
                    parents[c] += 1;
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err(TreeError::Invalid("nodes do not form a tree".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("tree serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, TreeError> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        if let Some(found) = v.get("version").and_then(|v| v.as_u64()) {
            if found != u64::from(TREE_VERSION) {
                return Err(TreeError::VersionMismatch {
                    found: found as u32,
                    expected: TREE_VERSION,
                });
            }
        }
        let tree: CopTree = serde_json::from_value(v)?;
        tree.validate()?;
        Ok(tree)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TreeError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TreeError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Binary classification scores with "correct" as the positive class.
/// Ratios with a zero denominator are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

pub fn classification_metrics(
    preds: &[Verdict],
    labels: &[Verdict],
) -> Result<ClassificationMetrics, TreeError> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(TreeError::LengthMismatch(preds.len(), labels.len()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (p, l) in preds.iter().zip(labels) {
        match (p.is_correct(), l.is_correct()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
    let precision = ratio(tp, fp);
    let recall = ratio(tp, fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Ok(ClassificationMetrics {
        precision,
        recall,
        f1,
        tp,
        fp,
        fn_,
        tn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_extraction() {
        let f = CopFeatures::from_column(&[0.3, 0.6, 0.2, 0.8]);
        assert_eq!(f.f_max, 0.8);
        assert_eq!(f.f_min, 0.2);
        assert!((f.f_min_delta + 0.4).abs() < 1e-15);
        assert!(!f.degenerate);
        let inc = CopFeatures::from_column(&[0.1, 0.2, 0.5, 0.9]);
        assert!(inc.f_min_delta >= 0.0);
        let d = CopFeatures::from_column(&[0.5]);
        assert_eq!(
            (d.f_max, d.f_min, d.f_min_delta, d.degenerate),
            (0.5, 0.5, 0.0, true)
        );
        assert_eq!(d.as_array(), [0.0, 0.5, 0.5]);
    }

    #[test]
    fn metrics_formulas() {
        use Verdict::*;
        let m = classification_metrics(&[Correct, Incorrect], &[Correct, Incorrect]).unwrap();
        assert_eq!(
            (m.precision, m.recall, m.f1),
            (Some(1.0), Some(1.0), Some(1.0))
        );
        let preds = [Correct, Correct, Correct, Incorrect, Incorrect];
        let labels = [Correct, Correct, Incorrect, Correct, Correct];
        let m = classification_metrics(&preds, &labels).unwrap();
        assert!((m.precision.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall.unwrap() - 0.5).abs() < 1e-12);
        assert!((m.f1.unwrap() - 4.0 / 7.0).abs() < 1e-12);
        let m = classification_metrics(&[Incorrect], &[Incorrect]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (None, None, None));
    }

    fn stump_tree() -> CopTree {
        CopTree::from_parts(
            vec![
                Node::Split {
                    feature: 2,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                },
                Node::Leaf {
                    label: Verdict::Incorrect,
                    correct: 0,
                    incorrect: 3,
                },
                Node::Leaf {
                    label: Verdict::Correct,
                    correct: 3,
                    incorrect: 0,
                },
            ],
            TrainingMeta {
                seed: 0,
                sample_count: 6,
                impurity: "gini".into(),
                max_leaves: 16,
            },
        )
    }

    #[test]
    fn classify_boundary_goes_left() {
        let t = stump_tree();
        let f = |v: f64| CopFeatures {
            f_max: v,
            f_min: 0.0,
            f_min_delta: 0.0,
            degenerate: false,
        };
        assert_eq!(t.classify(&f(0.3)), Verdict::Incorrect);
        assert_eq!(t.classify(&f(0.5)), Verdict::Incorrect);
        assert_eq!(t.classify(&f(0.51)), Verdict::Correct);
    }

    #[test]
    fn persistence_round_trip_and_version_gate() {
        let t = stump_tree();
        let json = t.to_json();
        assert_eq!(CopTree::from_json(&json).unwrap(), t);
        let future = json.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(
            CopTree::from_json(&future),
            Err(TreeError::VersionMismatch {
                found: 2,
                expected: 1
            })
        ));
        let cyclic = json.replace("\"left\": 1", "\"left\": 0");
        assert!(matches!(
            CopTree::from_json(&cyclic),
            Err(TreeError::Invalid(_))
        ));
    }
}
