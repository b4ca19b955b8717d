mod support;

use std::collections::HashMap;

use proptest::prelude::*;
use rand::Rng;

use cop_core::analysis::cop_score;
use cop_core::backend::ScriptedBuilder;
use cop_core::selection::{
    evaluate_strategies, majority_vote, select_by_cops, EvalItem, EvalOptions, Strategy,
};
use cop_core::synthetic::{Population, PopulationSpec};
use cop_core::tree::{
    extract_features, resample_until_accept, train_tree, CopFeatures, CopTree, Node, TreeOptions,
    Verdict,
};
use cop_core::{validate_target_set, DecodeConfig, Execution, ProbeSession};
use support::*;

/// 200 labeled samples whose correctness depends noisily on two features.
fn noisy_samples(seed: u64) -> Vec<(CopFeatures, Verdict)> {
    let mut r = rng(seed);
    (0..200)
        .map(|_| {
            let k = r.random_range(1..8);
            let col: Vec<f64> = (0..=k).map(|_| r.random::<f64>()).collect();
            let f = CopFeatures::from_column(&col);
            let signal = 0.7 * f.f_max + 0.5 * f.f_min_delta + 0.3 * r.random::<f64>();
            (f, Verdict::from_bool(signal > 0.55))
        })
        .collect()
}

fn accuracy(tree: &CopTree, samples: &[(CopFeatures, Verdict)]) -> f64 {
    let hits = samples
        .iter()
        .filter(|(x, v)| tree.classify(x) == *v)
        .count();
    hits as f64 / samples.len() as f64
}

#[test]
fn tree_beats_best_stump_and_is_reproducible() {
    for seed in 0..5 {
        let samples = noisy_samples(seed);
        let tree = train_tree(&samples, &TreeOptions::default()).unwrap();
        assert!(tree.leaf_count() <= 16);
        assert!(accuracy(&tree, &samples) >= best_stump_accuracy(&samples));
        let again = train_tree(&samples, &TreeOptions::default()).unwrap();
        assert_eq!(again, tree);
        assert_eq!(again.to_json(), tree.to_json());
    }
}

#[test]
fn routing_recomposes_leaf_counts() {
    let samples = noisy_samples(42);
    let tree = train_tree(&samples, &TreeOptions::default()).unwrap();
    let mut routed: HashMap<usize, (usize, usize)> = HashMap::new();
    for (x, v) in &samples {
        let e = routed.entry(tree.leaf_index(x)).or_default();
        if v.is_correct() {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    let mut total = 0;
    for (i, node) in tree.nodes().iter().enumerate() {
        if let Node::Leaf {
            correct, incorrect, ..
        } = node
        {
            assert_eq!(
                routed.get(&i).copied().unwrap_or_default(),
                (*correct, *incorrect)
            );
            total += correct + incorrect;
        }
    }
    assert_eq!(total, samples.len());
    assert_eq!(tree.training().sample_count, 200);
}

#[test]
fn separable_set_needs_one_split() {
    let mut r = rng(3);
    let samples: Vec<(CopFeatures, Verdict)> = (0..200)
        .map(|i| {
            let correct = i % 2 == 0;
            let top = if correct {
                r.random_range(0.91..1.0)
            } else {
                r.random_range(0.2..0.85)
            };
            let col = [r.random_range(0.0..0.2), top];
            (CopFeatures::from_column(&col), Verdict::from_bool(correct))
        })
        .collect();
    let tree = train_tree(&samples, &TreeOptions::default()).unwrap();
    assert_eq!(tree.leaf_count(), 2);
    assert_eq!(tree.depth(), 1);
    assert_eq!(accuracy(&tree, &samples), 1.0);
}

#[test]
fn tree_file_round_trip() {
    let samples = noisy_samples(7);
    let tree = train_tree(
        &samples,
        &TreeOptions {
            max_leaves: 8,
            seed: 99,
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("tree.json");
    tree.save(&p).unwrap();
    let back = CopTree::load(&p).unwrap();
    assert_eq!(back, tree);
    assert_eq!(back.training().seed, 99);
    assert!(back.leaf_count() <= 8);
}

fn trace_with(j: usize, col: &[f64]) -> cop_core::ProbeTrace {
    let rows = col
        .iter()
        .map(|&p| {
            let rest = (1.0 - p) / 4.0;
            (0..4).map(|i| if i == j { p } else { rest }).collect()
        })
        .collect();
    cop_core::ProbeTrace::from_matrix(
        "q",
        cop_core::ConfidenceMatrix::from_rows(rows).unwrap(),
        j,
        None,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn majority_winner_has_maximal_votes(cands in prop::collection::vec((0usize..4, 0.0f64..1.0, 0.0f64..1.0), 1..9)) {
        let traces: Vec<_> = cands.iter().map(|&(j, a, b)| trace_with(j, &[a, b])).collect();
        let i = majority_vote(&traces).unwrap();
        let count = |j: usize| traces.iter().filter(|t| t.final_prediction() == j).count();
        let best = (0..4).map(count).max().unwrap();
        prop_assert_eq!(count(traces[i].final_prediction()), best);
        for (m, t) in traces.iter().enumerate() {
            if count(t.final_prediction()) == best {
                prop_assert!(cop_score(t) <= cop_score(&traces[i]));
                if cop_score(t) == cop_score(&traces[i]) {
                    prop_assert!(m >= i);
                }
            }
        }
    }

    #[test]
    fn cops_choice_survives_increasing_transforms(cands in prop::collection::vec((0usize..4, 0.0f64..1.0, 0.0f64..1.0), 1..9)) {
        let traces: Vec<_> = cands.iter().map(|&(j, a, b)| trace_with(j, &[a, b])).collect();
        let scores: Vec<f64> = traces.iter().map(cop_score).collect();
        let chosen = select_by_cops(&traces).unwrap();
        for f in [|x: f64| x * x * x + 2.0 * x, |x: f64| (3.0 * x).exp(), |x: f64| x.atan()] {
            let mapped: Vec<f64> = scores.iter().map(|&s| f(s)).collect();
            let max = mapped.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(mapped.iter().position(|&s| s == max).unwrap(), chosen);
        }
    }
}

#[test]
fn degenerate_sampling_makes_strategies_agree() {
    let mut b = ScriptedBuilder::new();
    let labels = ["A", "B", "C", "D"];
    let mut items = Vec::new();
    for q in 0..6 {
        let key = format!("Only path {q}");
        let pick = labels[q % 4];
        let steps = vec![
            "One thing is known. ".to_string(),
            format!("So, the answer is ({pick})."),
        ];
        let row: Vec<(String, f64)> = labels
            .iter()
            .map(|l| (l.to_string(), if *l == pick { 0.7 } else { 0.1 }))
            .collect();
        b.add_variant(&key, 0, 1.0, &steps, &vec![row; 3]);
        items.push(EvalItem {
            question_id: format!("q{q}"),
            prompt: format!("Question: {key}\nAnswer:"),
            gold: if q < 4 { q % 4 } else { 0 },
        });
    }
    let backend = b.build().unwrap();
    let session =
        ProbeSession::new(&backend, validate_target_set(&labels, &backend).unwrap()).unwrap();
    for k in [1, 5] {
        let cmp = evaluate_strategies(
            &session,
            &items,
            &DecodeConfig::sampling(11),
            &EvalOptions {
                k,
                exec: Execution::Sequential,
            },
        )
        .unwrap();
        let acc: Vec<f64> = cmp.rows.iter().map(|r| r.accuracy).collect();
        assert_eq!(cmp.rows[1].strategy, Strategy::Majority.name(k));
        assert_eq!(acc[1], acc[2]);
        assert_eq!(acc[1], 5.0 / 6.0);
        assert_eq!(acc[0], acc[1]);
    }
}

#[test]
fn strategy_evaluation_is_reproducible_across_executors() {
    let pop = Population::new(PopulationSpec {
        questions: 12,
        ..Default::default()
    });
    let backend = pop.backend().unwrap();
    let session = ProbeSession::new(
        &backend,
        validate_target_set(&["A", "B", "C", "D"], &backend).unwrap(),
    )
    .unwrap();
    let items: Vec<EvalItem> = (0..12)
        .map(|q| EvalItem {
            question_id: pop.records[q].id.clone(),
            prompt: pop.prompt(q),
            gold: pop.gold(q),
        })
        .collect();
    let cfg = Population::sampling_config(100);
    let seq = evaluate_strategies(
        &session,
        &items,
        &cfg,
        &EvalOptions {
            k: 5,
            exec: Execution::Sequential,
        },
    )
    .unwrap();
    let par = evaluate_strategies(
        &session,
        &items,
        &cfg,
        &EvalOptions {
            k: 5,
            exec: Execution::Parallel,
        },
    )
    .unwrap();
    assert_eq!(seq.decisions, par.decisions);
    assert_eq!(seq.runs, par.runs);
    // k = 1: both sample strategies pick the single sample
    let one = evaluate_strategies(
        &session,
        &items,
        &cfg,
        &EvalOptions {
            k: 1,
            exec: Execution::Parallel,
        },
    )
    .unwrap();
    for d in &one.decisions {
        assert_eq!(d.majority, d.sample_predictions[0]);
        assert_eq!(d.cops, d.sample_predictions[0]);
    }
}

#[test]
fn synthetic_variants_replay_exactly() {
    let pop = Population::new(PopulationSpec {
        questions: 5,
        ..Default::default()
    });
    let census = pop.census_backend().unwrap();
    let session = ProbeSession::new(
        &census,
        validate_target_set(&["A", "B", "C", "D"], &census).unwrap(),
    )
    .unwrap();
    for v in &pop.variants {
        let t = session
            .run_cop(
                "c",
                &pop.census_prompt(v.question, v.variant),
                &DecodeConfig::greedy(),
                Some(pop.gold(v.question)),
            )
            .unwrap();
        assert_eq!(t.final_prediction(), v.label);
        assert_eq!(t.final_column(), v.column);
        assert_eq!(t.is_correct(), Some(v.correct));
        assert!((cop_score(&t) - v.score).abs() < 1e-15);
    }
}

#[test]
fn resampling_accepts_first_approved_sample() {
    let pop = Population::new(PopulationSpec {
        questions: 8,
        ..Default::default()
    });
    let backend = pop.backend().unwrap();
    let session = ProbeSession::new(
        &backend,
        validate_target_set(&["A", "B", "C", "D"], &backend).unwrap(),
    )
    .unwrap();
    let samples: Vec<(CopFeatures, Verdict)> = pop
        .variants
        .iter()
        .map(|v| {
            (
                CopFeatures::from_column(&v.column),
                Verdict::from_bool(v.correct),
            )
        })
        .collect();
    let tree = train_tree(&samples, &TreeOptions::default()).unwrap();
    let cfg = Population::sampling_config(500);
    for q in 0..8 {
        let out = resample_until_accept(
            &session,
            "q",
            &pop.prompt(q),
            Some(pop.gold(q)),
            &cfg,
            &tree,
            5,
        )
        .unwrap();
        assert!(out.n_samples >= 1 && out.n_samples <= 5);
        // the samples before the accepted one were all rejected
        for i in 0..out.n_samples - 1 {
            let t = session
                .run_cop(
                    "q",
                    &pop.prompt(q),
                    &cfg.with_seed(500 + i as u64),
                    Some(pop.gold(q)),
                )
                .unwrap();
            assert_eq!(tree.classify(&extract_features(&t)), Verdict::Incorrect);
        }
        if out.accepted {
            assert_eq!(
                tree.classify(&extract_features(&out.trace)),
                Verdict::Correct
            );
        } else {
            assert_eq!(out.n_samples, 5);
        }
    }
    assert!(resample_until_accept(
        &session,
        "q",
        &pop.prompt(0),
        None,
        &DecodeConfig::greedy(),
        &tree,
        5
    )
    .is_err());
}
