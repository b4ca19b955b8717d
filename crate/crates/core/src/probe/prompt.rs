use serde::{Deserialize, Serialize};

pub const DEFAULT_COT_TRIGGER: &str = "Let's think step by step.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demo {
    pub question: String,
    /// Reasoning and answer following the trigger phrase.
    pub answer: String,
}

/// Few-shot prompt: instruction, demonstrations, then the question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    #[serde(default)]
    pub instruction: String,
    #[serde(default)]
    pub demos: Vec<Demo>,
    #[serde(default)]
    pub question: String,
    #[serde(default = "default_trigger")]
    pub cot_trigger: String,
}

fn default_trigger() -> String {
    DEFAULT_COT_TRIGGER.to_string()
}

impl Default for PromptSpec {
    fn default() -> Self {
        Self {
            instruction: String::new(),
            demos: Vec::new(),
            question: String::new(),
            cot_trigger: default_trigger(),
        }
    }
}

impl PromptSpec {
    pub fn with_question(&self, question: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            ..self.clone()
        }
    }

    /// Parses a plain-text template file: optional instruction lines, then
    /// blank-line separated `Question:` / `Answer:` demo blocks. The trigger
    /// phrase is stripped from demo answers when present.
    pub fn parse_template(text: &str) -> Self {
        let mut spec = PromptSpec::default();
        let mut instruction = Vec::new();
        let mut current: Option<(String, Option<String>)> = None;
        let mut demos = Vec::new();
        for line in text.lines() {
            if let Some(q) = line.strip_prefix("Question:") {
                if let Some((q, Some(a))) = current.take() {
                    demos.push(Demo {
                        question: q,
                        answer: a,
                    });
                }
                current = Some((q.trim().to_string(), None));
            } else if let Some(a) = line.strip_prefix("Answer:") {
                let a = a.trim();
                let a = a.strip_prefix(&spec.cot_trigger).unwrap_or(a).trim();
                if let Some((_, ans)) = current.as_mut() {
                    *ans = Some(a.to_string());
                }
            } else if line.trim().is_empty() {
                continue;
            } else {
                match current.as_mut() {
                    Some((_, Some(ans))) => {
                        ans.push('\n');
                        ans.push_str(line);
                    }
                    Some((q, None)) => {
                        q.push('\n');
                        q.push_str(line);
                    }
                    None => instruction.push(line),
                }
            }
        }
        if let Some((q, Some(a))) = current {
            demos.push(Demo {
                question: q,
                answer: a,
            });
        }
        spec.instruction = instruction.join("\n");
        spec.demos = demos;
        spec
    }
}

/// Renders the few-shot template.
///
/// ```text
/// {instruction}
/// Question: {demo question}
/// Answer: Let's think step by step. {demo answer}
///
/// Question: {question}
/// Answer:
/// ```
pub fn build_prompt(spec: &PromptSpec) -> String {
    let mut out = String::new();
    if !spec.instruction.is_empty() {
        out.push_str(&spec.instruction);
        out.push('\n');
    }
    for d in &spec.demos {
        out.push_str("Question: ");
        out.push_str(&d.question);
        out.push_str("\nAnswer: ");
        out.push_str(&spec.cot_trigger);
        out.push(' ');
        out.push_str(&d.answer);
        out.push_str("\n\n");
    }
    out.push_str("Question: ");
    out.push_str(&spec.question);
    out.push_str("\nAnswer:");
    out
}
