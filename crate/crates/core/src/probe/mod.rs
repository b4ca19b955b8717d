//! Prompt construction, step segmentation and the probing loop.

mod engine;
mod prompt;
mod segment;

pub use engine::{ContractReport, ProbeError, ProbeSession, DEFAULT_PROBE_STRING};
pub use prompt::{build_prompt, Demo, PromptSpec, DEFAULT_COT_TRIGGER};
pub use segment::{segment_steps, StepStopRule};
