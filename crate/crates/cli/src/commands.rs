use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use cop_core::analysis::{
    accuracy_split, cop_score, cot_effect, decile_curve, ear, is_early_answering, tafcr,
    JudgeRecord,
};
use cop_core::backend::{RemoteBackend, RemoteConfig, RetryPolicy, ScriptedBackend, ToyLm};
use cop_core::io::{
    accuracy_split_report, decile_series, decisions_report, ear_curve, ear_report, effect_report,
    load_dataset, load_labels, read_traces, scores_report, strategy_report, tafcr_report,
    trajectory_series, tree_metrics_report, write_traces, CurvePoint, DatasetRecord, EarSummary,
    Report, TafcrSummary, TraceHeader, TraceWriter,
};
use cop_core::selection::{evaluate_strategies, EvalItem, EvalOptions, Strategy};
use cop_core::trace::DecodeMode;
use cop_core::tree::{
    classification_metrics, extract_features, resample_until_accept, train_tree, CopFeatures,
    CopTree, TreeOptions, Verdict,
};
use cop_core::{
    build_prompt, validate_target_set, Execution, ModelBackend, ProbeSession, ProbeTrace,
    PromptSpec,
};

use crate::config::{BackendKind, Settings};
use crate::manifest::RunRecord;

fn build_backend(s: &Settings, rec: &mut RunRecord) -> Result<Box<dyn ModelBackend>> {
    let backend: Box<dyn ModelBackend> = match s.backend {
        BackendKind::Scripted => {
            let path = rec.input(Settings::require(&s.script, "--script")?);
            let b = ScriptedBackend::load(path)
                .with_context(|| format!("loading script {}", path.display()))?;
            Box::new(b.with_probe_string(&s.probe_string))
        }
        BackendKind::Toy => {
            let path = rec.input(Settings::require(&s.toy_model, "--toy-model")?);
            Box::new(
                ToyLm::load(path)
                    .with_context(|| format!("loading toy model {}", path.display()))?,
            )
        }
        BackendKind::Remote => {
            let Some(endpoint) = &s.endpoint else {
                bail!("missing --endpoint (flag, config file or COP_ENDPOINT)");
            };
            let mut cfg = RemoteConfig::new(endpoint.clone());
            cfg.tokenize_path = s.tokenize_path.clone();
            cfg.model = s.model.clone();
            cfg.api_key = s.api_key.clone();
            cfg.top_logprobs = s.top_logprobs;
            cfg.timeout_secs = s.timeout_secs;
            cfg.retry = RetryPolicy {
                max_attempts: s.retry_attempts,
                base_delay_ms: s.retry_base_ms,
            };
            Box::new(RemoteBackend::new(cfg))
        }
    };
    rec.backend = Some(backend.descriptor());
    Ok(backend)
}

fn session<'a>(backend: &'a dyn ModelBackend, s: &Settings) -> Result<ProbeSession<'a>> {
    let target =
        validate_target_set(&s.answer_labels, backend).context("resolving answer labels")?;
    Ok(ProbeSession::with_probe_string(
        backend,
        target,
        &s.probe_string,
    )?)
}

fn prompt_spec(s: &Settings, rec: &mut RunRecord) -> Result<PromptSpec> {
    match &s.template {
        Some(p) => {
            let text = std::fs::read_to_string(rec.input(p))
                .with_context(|| format!("reading template {}", p.display()))?;
            Ok(PromptSpec::parse_template(&text))
        }
        None => Ok(PromptSpec::default()),
    }
}

fn dataset(s: &Settings, rec: &mut RunRecord) -> Result<Vec<DatasetRecord>> {
    let path = rec.input(Settings::require(&s.dataset, "--dataset")?);
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn eval_items(
    s: &Settings,
    rec: &mut RunRecord,
    session: &ProbeSession<'_>,
) -> Result<Vec<EvalItem>> {
    let spec = prompt_spec(s, rec)?;
    dataset(s, rec)?
        .iter()
        .map(|r| {
            Ok(EvalItem {
                question_id: r.id.clone(),
                prompt: build_prompt(&spec.with_question(r.render())),
                gold: r.gold_index(session.target())?,
            })
        })
        .collect()
}

fn traces(s: &Settings, rec: &mut RunRecord) -> Result<(TraceHeader, Vec<ProbeTrace>)> {
    let path = rec.input(Settings::require(&s.traces, "--traces")?);
    read_traces(path).with_context(|| format!("reading traces {}", path.display()))
}

fn labels(s: &Settings, rec: &mut RunRecord) -> Result<Vec<JudgeRecord>> {
    let path = rec.input(Settings::require(&s.labels, "--labels")?);
    load_labels(path).with_context(|| format!("reading labels {}", path.display()))
}

fn header(session: &ProbeSession<'_>, cfg: &cop_core::DecodeConfig) -> TraceHeader {
    TraceHeader::new(
        session.backend().descriptor().backend_id,
        session
            .target()
            .labels()
            .iter()
            .map(|l| l.to_string())
            .collect(),
        cfg.clone(),
        session.probe_string(),
    )
}

fn write_report(rec: &mut RunRecord, name: &str, report: &Report) -> Result<()> {
    let path = rec.output(name);
    report.write(&path)?;
    Ok(())
}

fn write_json<T: Serialize>(rec: &mut RunRecord, name: &str, value: &T) -> Result<()> {
    let path = rec.output(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::create_dir_all(path.parent().unwrap_or(Path::new(".")))?;
    std::fs::write(&path, text)?;
    Ok(())
}

pub fn probe_run(s: &Settings, rec: &mut RunRecord) -> Result<()> {
    let backend = build_backend(s, rec)?;
    let session = session(backend.as_ref(), s)?;
    let items = eval_items(s, rec, &session)?;
    let cfg = s.decode_config();
    rec.seed("decode", cfg.seed);
    let exec: Execution = s.exec.into();
    let out = exec.try_map(&items, |it| {
        session.run_cop(&it.question_id, &it.prompt, &cfg, Some(it.gold))
    })?;
    let mut w = TraceWriter::create(rec.output("traces.jsonl"), header(&session, &cfg))?;
    for t in &out {
        w.write(t)?;
    }
    w.finish()?;
    Ok(())
}

fn ear_summary(name: &str, traces: &[ProbeTrace]) -> Result<EarSummary> {
    Ok(EarSummary {
        name: name.to_string(),
        n: traces.len(),
        n_ea: traces.iter().filter(|t| is_early_answering(t)).count(),
        ear: ear(traces)?,
    })
}

pub fn analyze_ear(s: &Settings, rec: &mut RunRecord) -> Result<()> {
    let (_, ts) = traces(s, rec)?;
    write_report(rec, "ear.csv", &ear_report(&[ear_summary(&s.name, &ts)?]))
}

pub fn analyze_split(s: &Settings, rec: &mut RunRecord) -> Result<()> {
    let (_, ts) = traces(s, rec)?;
    let split = accuracy_split(&ts)?;
    write_report(
        rec,
        "accuracy_split.csv",
        &accuracy_split_report(&[(s.name.clone(), split)]),
    )
}

pub fn analyze_effect(s: &Settings, rec: &mut RunRecord) -> Result<()> {
    let (_, ts) = traces(s, rec)?;
    let rows = ts
        .iter()
        .map(|t| Ok((t.question_id().to_string(), cot_effect(t)?)))
        .collect::<Result<Vec<_>>>()?;
    write_report(rec, "cot_effect.csv", &effect_report(&rows))
}

pub fn analyze_tafcr(s: &Settings, rec: &mut RunRecord) -> Result<()> {
    let ls = labels(s, rec)?;
    let summary = TafcrSummary {
        name: s.name.clone(),
        n: ls.len(),
        true_answers: ls.iter().filter(|r| r.answer_correct).count(),
        true_answer_false_cot: ls
            .iter()
            .filter(|r| r.answer_correct && !r.cot_correct)
            .count(),
        tafcr: tafcr(&ls)?,
    };
    write_report(rec, "tafcr.csv", &tafcr_report(&[summary]))
}

pub fn score(s: &Settings, rec: &mut RunRecord) -> Result<()> {
    let (_, ts) = traces(s, rec)?;
    write_report(rec, "scores.csv", &scores_report(&ts))
}

fn select(s: &Settings, rec: &mut RunRecord, strategy: Strategy) -> Result<()> {
    let backend = build_backend(s, rec)?;
    let session = session(backend.as_ref(), s)?;
    let items = eval_items(s, rec, &session)?;
    let cfg = s.decode_config();
    rec.seed("greedy", cfg.seed);
    rec.seed(
        "samples",
        format!(
            "{}..={}",
            cfg.seed.wrapping_add(1),
            cfg.seed.wrapping_add(s.k as u64)
        ),
    );
    let opts = EvalOptions {
        k: s.k,
        exec: s.exec.into(),
    };
    let cmp = evaluate_strategies(&session, &items, &cfg, &opts)?;
    write_report(
        rec,
        "strategy_comparison.csv",
        &strategy_report(&s.name, &cmp.rows),
    )?;
    write_report(rec, "decisions.csv", &decisions_report(&cmp.decisions))?;

    let (mode, chosen): (DecodeMode, Vec<&ProbeTrace>) = match strategy {
        Strategy::Greedy => (
            DecodeMode::Greedy,
            cmp.runs.iter().map(|r| &r.greedy).collect(),
        ),
        Strategy::Majority => (
            DecodeMode::Sample,
            cmp.runs
                .iter()
                .zip(&cmp.decisions)
                .map(|(r, d)| &r.samples[d.majority_index])
                .collect(),
        ),
        Strategy::CopScore => (
            DecodeMode::Sample,
            cmp.runs
                .iter()
                .zip(&cmp.decisions)
                .map(|(r, d)| &r.samples[d.cops_index])
                .collect(),
        ),
    };
    let file = match strategy {
        Strategy::Greedy => "selected_gs.jsonl",
        Strategy::Majority => "selected_maj.jsonl",
        Strategy::CopScore => "selected_cops.jsonl",
    };
    let owned: Vec<ProbeTrace> = chosen.into_iter().cloned().collect();
    write_traces(
        rec.output(file),
        &header(&session, &cfg.with_mode(mode)),
        &owned,
    )?;
    let row = &cmp.rows[Strategy::ALL
        .iter()
        .position(|x| *x == strategy)
        .unwrap_or(0)];
    println!(
        "{}: {}/{} = {}",
        row.strategy, row.correct, row.total, row.accuracy
    );
    Ok(())
}

pub fn select_gs(s: &Settings, rec: &mut RunRecord) -> Result<()> {
    select(s, rec, Strategy::Greedy)
}

pub fn select_maj(s: &Settings, rec: &mut RunRecord) -> Result<()> {
    select(s, rec, Strategy::Majority)
}

pub fn select_cops(s: &Settings, rec: &mut RunRecord) -> Result<()> {
    select(s, rec, Strategy::CopScore)
}

/// Pairs each trace with its judged reasoning correctness.
fn labeled(ts: &[ProbeTrace], ls: &[JudgeRecord]) -> Result<Vec<(CopFeatures, Verdict)>> {
    let by_id: HashMap<&str, &JudgeRecord> =
        ls.iter().map(|r| (r.question_id.as_str(), r)).collect();
    ts.iter()
        .map(|t| {
            let r = by_id
                .get(t.question_id())
                .with_context(|| format!("no label for {}", t.question_id()))?;
            Ok((extract_features(t), Verdict::from_bool(r.cot_correct)))
        })
        .collect()
}

fn load_tree(s: &Settings, rec: &mut RunRecord) -> Result<CopTree> {
    let path = rec.input(Settings::require(&s.tree, "--tree")?);
    CopTree::load(path).with_context(|| format!("loading tree {}", path.display()))
}

pub fn tree_train(s: &Settings, rec: &mut RunRecord) -> Result<()> {
    let (_, ts) = traces(s, rec)?;
    let samples = labeled(&ts, &labels(s, rec)?)?;
    rec.seed("tree", s.seed);
    let tree = train_tree(
        &samples,
        &TreeOptions {
            max_leaves: s.max_leaves,
            seed: s.seed,
        },
    )?;
    tree.save(rec.output("tree.json"))?;
    println!("tree: {} leaves, depth {}", tree.leaf_count(), tree.depth());
    Ok(())
}

pub fn tree_eval(s: &Settings, rec: &mut RunRecord) -> Result<()> {
    let tree = load_tree(s, rec)?;
    let (_, ts) = traces(s, rec)?;
    let samples = labeled(&ts, &labels(s, rec)?)?;
    let preds: Vec<Verdict> = samples.iter().map(|(x, _)| tree.classify(x)).collect();
    let truth: Vec<Verdict> = samples.iter().map(|(_, v)| *v).collect();
    let m = classification_metrics(&preds, &truth)?;
    write_report(rec, "tree_metrics.csv", &tree_metrics_report(&m, None))
}

pub fn tree_classify(s: &Settings, rec: &mut RunRecord) -> Result<()> {
    let tree = load_tree(s, rec)?;
    let (_, ts) = traces(s, rec)?;
    let mut r = Report::new(&[
        "question_id",
        "verdict",
        "leaf",
        "f_min_delta",
        "f_min",
        "f_max",
        "degenerate",
    ]);
    for t in &ts {
        let f = extract_features(t);
        r.push(vec![
            t.question_id().to_string(),
            tree.classify(&f).as_str().to_string(),
            tree.leaf_index(&f).to_string(),
            cop_core::io::fmt_f64(f.f_min_delta),
            cop_core::io::fmt_f64(f.f_min),
            cop_core::io::fmt_f64(f.f_max),
            f.degenerate.to_string(),
        ]);
    }
    write_report(rec, "classifications.csv", &r)
}

pub fn resample(s: &Settings, rec: &mut RunRecord) -> Result<()> {
    let tree = load_tree(s, rec)?;
    let backend = build_backend(s, rec)?;
    let session = session(backend.as_ref(), s)?;
    let items = eval_items(s, rec, &session)?;
    let cfg = s.decode_config().with_mode(DecodeMode::Sample);
    rec.seed(
        "samples",
        format!(
            "{}..<{}",
            cfg.seed,
            cfg.seed.wrapping_add(s.max_samples as u64)
        ),
    );
    let exec: Execution = s.exec.into();
    let outcomes = exec.try_map(&items, |it| {
        resample_until_accept(
            &session,
            &it.question_id,
            &it.prompt,
            Some(it.gold),
            &cfg,
            &tree,
            s.max_samples,
        )
    })?;
    let mut r = Report::new(&[
        "question_id",
        "n_samples",
        "accepted",
        "prediction",
        "gold",
        "correct",
        "cop_score",
    ]);
    for o in &outcomes {
        let t = &o.trace;
        r.push(vec![
            t.question_id().to_string(),
            o.n_samples.to_string(),
            o.accepted.to_string(),
            t.final_prediction().to_string(),
            t.gold().map(|g| g.to_string()).unwrap_or_default(),
            t.is_correct().map(|c| c.to_string()).unwrap_or_default(),
            cop_core::io::fmt_f64(cop_score(t)),
        ]);
    }
    write_report(rec, "resample.csv", &r)?;
    let n = outcomes.len().max(1) as f64;
    let mut summary = Report::new(&["n", "accepted", "avg_samples", "accuracy"]);
    summary.push(vec![
        outcomes.len().to_string(),
        outcomes.iter().filter(|o| o.accepted).count().to_string(),
        cop_core::io::fmt_f64(outcomes.iter().map(|o| o.n_samples).sum::<usize>() as f64 / n),
        cop_core::io::fmt_f64(
            outcomes
                .iter()
                .filter(|o| o.trace.is_correct() == Some(true))
                .count() as f64
                / n,
        ),
    ]);
    write_report(rec, "resample_summary.csv", &summary)?;
    let ts: Vec<ProbeTrace> = outcomes.into_iter().map(|o| o.trace).collect();
    write_traces(rec.output("resample.jsonl"), &header(&session, &cfg), &ts)?;
    Ok(())
}

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn plot_trajectories(s: &Settings, rec: &mut RunRecord) -> Result<()> {
    let (_, ts) = traces(s, rec)?;
    for (i, t) in ts.iter().enumerate() {
        let name = format!("trajectories/{i:04}-{}.csv", file_stem_for(t.question_id()));
        write_report(rec, &name, &trajectory_series(t))?;
    }
    Ok(())
}

pub fn plot_deciles(s: &Settings, rec: &mut RunRecord) -> Result<()> {
    let (_, ts) = traces(s, rec)?;
    let scored = ts
        .iter()
        .map(|t| {
            let c = t
                .is_correct()
                .with_context(|| format!("trace {} has no gold label", t.question_id()))?;
            Ok((cop_score(t), c))
        })
        .collect::<Result<Vec<_>>>()?;
    write_report(rec, "deciles.csv", &decile_series(&decile_curve(&scored)?))
}

/// Orders group keys numerically when all of them parse as numbers.
fn sort_groups(keys: &mut [String]) {
    if keys.iter().all(|k| k.parse::<f64>().is_ok()) {
        keys.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .total_cmp(&b.parse::<f64>().unwrap())
        });
    } else {
        keys.sort();
    }
}

pub fn plot_ear_curve(s: &Settings, rec: &mut RunRecord) -> Result<()> {
    let (_, ts) = traces(s, rec)?;
    let records = dataset(s, rec)?;
    let group_of: HashMap<&str, String> = records
        .iter()
        .filter_map(|r| r.metadata_str(&s.group_key).map(|g| (r.id.as_str(), g)))
        .collect();
    let mut groups: BTreeMap<String, Vec<ProbeTrace>> = BTreeMap::new();
    for t in ts {
        let g = group_of
            .get(t.question_id())
            .with_context(|| format!("{} has no {:?} metadata", t.question_id(), s.group_key))?;
        groups.entry(g.clone()).or_default().push(t);
    }
    let mut keys: Vec<String> = groups.keys().cloned().collect();
    sort_groups(&mut keys);
    let points = keys
        .iter()
        .map(|k| {
            let members = &groups[k];
            let correct = members
                .iter()
                .filter(|t| t.is_correct() == Some(true))
                .count();
            Ok(CurvePoint {
                group: k.clone(),
                n: members.len(),
                ear: ear(members)?,
                accuracy: correct as f64 / members.len() as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_report(rec, "ear_curve.csv", &ear_curve(&points, s.sigma)?)
}

#[derive(Serialize)]
struct CheckOutput {
    descriptor: cop_core::BackendDescriptor,
    labels: Vec<String>,
    prompt: String,
    steps: usize,
    first_row: Vec<f64>,
    partial_distribution: bool,
    non_interference: bool,
}

pub fn backend_check(s: &Settings, rec: &mut RunRecord) -> Result<()> {
    let backend = build_backend(s, rec)?;
    let session = session(backend.as_ref(), s)?;
    let prompt = if s.dataset.is_some() {
        eval_items(s, rec, &session)?
            .into_iter()
            .next()
            .context("dataset is empty")?
            .prompt
    } else {
        build_prompt(&PromptSpec::default().with_question("Which option is correct?"))
    };
    let cfg = s.decode_config();
    let report = session.check_contract(&prompt, &cfg)?;
    let out = CheckOutput {
        descriptor: report.descriptor,
        labels: s.answer_labels.clone(),
        prompt,
        steps: report.steps,
        first_row: report.first_row,
        partial_distribution: report.partial_distribution,
        non_interference: true,
    };
    println!(
        "backend check passed: {} steps, first row {:?}{}",
        out.steps,
        out.first_row,
        if out.partial_distribution {
            " (partial distribution, floored)"
        } else {
            ""
        }
    );
    write_json(rec, "backend_check.json", &out)
}
