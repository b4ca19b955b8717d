//! Regenerates the bundled fixtures in `fixtures/` from the synthetic
//! population: dataset, replay script, judge labels and a toy model.
//!
//! cargo run -p cop-cli --example make_fixtures

use std::path::PathBuf;

use cop_core::analysis::JudgeRecord;
use cop_core::backend::ToyLmSpec;
use cop_core::io::{write_dataset, write_labels};
use cop_core::synthetic::{Population, PopulationSpec};
use cop_core::{build_prompt, validate_target_set, DecodeConfig, ProbeSession, PromptSpec};

fn main() -> anyhow::Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let pop = Population::new(PopulationSpec::default());
    write_dataset(dir.join("dataset.jsonl"), &pop.records)?;

    let mut script = String::new();
    for r in pop.script().to_records() {
        script.push_str(&serde_json::to_string(&r)?);
        script.push('\n');
    }
    std::fs::write(dir.join("script.jsonl"), script)?;

    // judge labels for the greedy responses; every third correct answer is
    // marked as resting on flawed reasoning
    let template = PromptSpec::parse_template(&std::fs::read_to_string(dir.join("template.txt"))?);
    let backend = pop.backend()?;
    let session = ProbeSession::new(
        &backend,
        validate_target_set(&["A", "B", "C", "D"], &backend)?,
    )?;
    let mut labels = Vec::new();
    let mut correct_seen = 0;
    for (q, rec) in pop.records.iter().enumerate() {
        let prompt = build_prompt(&template.with_question(rec.render()));
        let t = session.run_cop(&rec.id, &prompt, &DecodeConfig::greedy(), Some(pop.gold(q)))?;
        let answer_correct = t.is_correct() == Some(true);
        let mut cot_correct = answer_correct;
        if answer_correct {
            correct_seen += 1;
            cot_correct = correct_seen % 3 != 0;
        }
        labels.push(JudgeRecord {
            question_id: rec.id.clone(),
            answer_correct,
            cot_correct,
        });
    }
    write_labels(dir.join("labels.jsonl"), &labels)?;

    let corpus = pop
        .records
        .iter()
        .map(|r| {
            format!(
                "{} Option {} looks right. So, the answer is ({}).",
                build_prompt(&template.with_question(r.render())),
                r.answer_label,
                r.answer_label
            )
        })
        .collect();
    let toy = ToyLmSpec {
        name: Some("toy-fixture".into()),
        order: 6,
        corpus,
        ..Default::default()
    };
    std::fs::write(
        dir.join("toy.json"),
        serde_json::to_string_pretty(&toy)? + "\n",
    )?;
    println!("fixtures written to {}", dir.display());
    Ok(())
}
