//! Chain-of-probe instrumentation.
//!
//! A chain-of-probe run records, after every generated reasoning sentence, the
//! model's next-token probability for each admissible answer label. The
//! resulting confidence matrix feeds the analyses in [`analysis`] (early
//! answering, CoP score, statistics), the reasoning gate in [`tree`] and the
//! answer-selection strategies in [`selection`].
//!
//! Model access goes through the [`backend::ModelBackend`] trait. Three
//! implementations ship with the crate: a scripted replay backend, a
//! table-driven toy language model with an explicit per-token cache, and an
//! HTTP client for completion servers exposing token log-probabilities.
//!
//! Batch work (many questions, Monte-Carlo replications) runs through
//! [`exec::Execution`], which uses rayon when the `parallel` feature is
//! enabled and falls back to a sequential loop otherwise.

pub mod analysis;
pub mod backend;
pub mod exec;
pub mod io;
pub mod probe;
pub mod selection;
pub mod synthetic;
pub mod trace;
pub mod tree;

pub use backend::{BackendDescriptor, BackendError, GenerationState, ModelBackend};
pub use exec::Execution;
pub use probe::{build_prompt, segment_steps, ProbeError, ProbeSession, PromptSpec, StepStopRule};
pub use trace::{
    argmax_row, final_prediction, step_predictions, validate_target_set, ConfidenceMatrix,
    ConfidenceRow, DecodeConfig, DecodeMode, PredictionSource, ProbeTrace, TargetTokenSet, TokenId,
    TraceError,
};
