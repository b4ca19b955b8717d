//! Best-first CART growth with Gini impurity.

use serde::{Deserialize, Serialize};

use super::{CopFeatures, CopTree, Node, TrainingMeta, TreeError, Verdict, FEATURE_ORDER};

pub const DEFAULT_MAX_LEAVES: usize = 16;

/// Splits must beat the current best by more than this (in count units) to
/// win, which makes the lower-feature / lower-threshold tie-break robust to
/// rounding.
const GAIN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeOptions {
    pub max_leaves: usize,
    /// Recorded in the tree metadata; training itself is deterministic.
    pub seed: u64,
}

impl Default for TreeOptions {
    fn default() -> Self {
        Self {
            max_leaves: DEFAULT_MAX_LEAVES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn counts(samples: &[([f64; 3], bool)], idx: &[usize]) -> (usize, usize) {
    let c = idx.iter().filter(|&&i| samples[i].1).count();
    (c, idx.len() - c)
}

/// n * gini(node), written as n - (c^2 + i^2) / n.
fn weighted_gini(c: usize, i: usize) -> f64 {
    let n = (c + i) as f64;
    if n == 0.0 {
        return 0.0;
    }
    n - ((c * c + i * i) as f64) / n
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi || m < lo {
        lo
    } else {
        m
    }
}

fn best_split(samples: &[([f64; 3], bool)], idx: &[usize]) -> Option<Split> {
    let (c, i) = counts(samples, idx);
    if c == 0 || i == 0 {
        return None;
    }
    let parent = weighted_gini(c, i);
    let mut best: Option<Split> = None;
    for f in 0..FEATURE_ORDER.len() {
        let mut order = idx.to_vec();
        order.sort_by(|&a, &b| samples[a].0[f].total_cmp(&samples[b].0[f]));
        let (mut lc, mut li) = (0, 0);
        for w in 0..order.len() - 1 {
            if samples[order[w]].1 {
                lc += 1;
            } else {
                li += 1;
            }
            let lo = samples[order[w]].0[f];
            let hi = samples[order[w + 1]].0[f];
            if lo == hi {
                continue;
            }
            let gain = parent - weighted_gini(lc, li) - weighted_gini(c - lc, i - li);
            if gain > GAIN_EPS && best.is_none_or(|b| gain > b.gain + GAIN_EPS) {
                best = Some(Split {
                    feature: f,
                    threshold: midpoint(lo, hi),
                    gain,
                });
            }
        }
    }
    best
}

fn leaf(samples: &[([f64; 3], bool)], idx: &[usize]) -> Node {
    let (correct, incorrect) = counts(samples, idx);
    Node::Leaf {
        // ties go to the conservative label
        label: Verdict::from_bool(correct > incorrect),
        correct,
        incorrect,
    }
}

/// Trains a Gini CART tree, expanding the leaf with the largest impurity
/// decrease first until `max_leaves` is reached or no split helps.
pub fn train_tree(
    samples: &[(CopFeatures, Verdict)],
    opts: &TreeOptions,
) -> Result<CopTree, TreeError> {
    if samples.len() < 2 {
        return Err(TreeError::TooFewSamples(samples.len()));
    }
    if opts.max_leaves < 1 {
        return Err(TreeError::InvalidInput(
            "max_leaves must be at least 1".into(),
        ));
    }
    let data: Vec<([f64; 3], bool)> = samples
        .iter()
        .map(|(f, v)| (f.as_array(), v.is_correct()))
        .collect();
    let (c, i) = counts(&data, &(0..data.len()).collect::<Vec<_>>());
    if c == 0 || i == 0 {
        return Err(TreeError::SingleClass);
    }

    let all: Vec<usize> = (0..data.len()).collect();
    let mut nodes = vec![leaf(&data, &all)];
    // frontier entries: (node index, sample indices, best split)
    let mut frontier: Vec<(usize, Vec<usize>, Option<Split>)> = {
        let s = best_split(&data, &all);
        vec![(0, all, s)]
    };
    let mut leaves = 1;
    while leaves < opts.max_leaves {
        let pick = frontier
            .iter()
            .enumerate()
            .filter_map(|(pos, (node, _, s))| s.map(|s| (pos, *node, s.gain)))
            .max_by(|a, b| a.2.total_cmp(&b.2).then(b.1.cmp(&a.1)));
        let Some((pos, _, _)) = pick else { break };
        let (node, idx, split) = frontier.swap_remove(pos);
        let split = split.expect("picked entries have a split");
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&s| data[s].0[split.feature] <= split.threshold);
        let left = nodes.len();
        nodes.push(leaf(&data, &left_idx));
        let right = nodes.len();
        nodes.push(leaf(&data, &right_idx));
        nodes[node] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        let ls = best_split(&data, &left_idx);
        let rs = best_split(&data, &right_idx);
        frontier.push((left, left_idx, ls));
        frontier.push((right, right_idx, rs));
        leaves += 1;
    }
    Ok(CopTree::from_parts(
        nodes,
        TrainingMeta {
            seed: opts.seed,
            sample_count: samples.len(),
            impurity: "gini".into(),
            max_leaves: opts.max_leaves,
        },
    ))
}
