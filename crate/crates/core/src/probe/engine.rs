use thiserror::Error;

use super::segment::StepStopRule;
use crate::backend::{BackendError, GenerationState, ModelBackend};
use crate::trace::{
    extract_answer, final_prediction, ConfidenceMatrix, ConfidenceRow, DecodeConfig, ProbeTrace,
    TargetTokenSet, TokenId, TraceError, TraceFlags, TraceParts,
};

pub const DEFAULT_PROBE_STRING: &str = " So, the answer is (";

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("backend contract violated: {0}")]
    Contract(String),
}

/// Decodes reasoning one sentence at a time and probes the answer
/// distribution after the prompt and after every step.
pub struct ProbeSession<'a> {
    backend: &'a dyn ModelBackend,
    target: TargetTokenSet,
    probe_string: String,
    probe_tokens: Vec<TokenId>,
    stop: StepStopRule,
}

impl<'a> ProbeSession<'a> {
    pub fn new(backend: &'a dyn ModelBackend, target: TargetTokenSet) -> Result<Self, ProbeError> {
        Self::with_probe_string(backend, target, DEFAULT_PROBE_STRING)
    }

    pub fn with_probe_string(
        backend: &'a dyn ModelBackend,
        target: TargetTokenSet,
        probe_string: &str,
    ) -> Result<Self, ProbeError> {
        let probe_tokens = backend.tokenize(probe_string)?;
        Ok(Self {
            backend,
            target,
            probe_string: probe_string.to_string(),
            probe_tokens,
            stop: StepStopRule::default(),
        })
    }

    pub fn with_stop_rule(mut self, stop: StepStopRule) -> Self {
        self.stop = stop;
        self
    }

    pub fn backend(&self) -> &'a dyn ModelBackend {
        self.backend
    }

    pub fn target(&self) -> &TargetTokenSet {
        &self.target
    }

    pub fn probe_string(&self) -> &str {
        &self.probe_string
    }

    fn probe(
        &self,
        state: &mut GenerationState,
        flags: &mut TraceFlags,
    ) -> Result<ConfidenceRow, ProbeError> {
        let row = self
            .backend
            .probe_distribution(state, &self.probe_tokens, &self.target)?;
        if row.is_partial() {
            log::debug!("labels {:?} missing from top-N listing", row.missing_labels);
            flags.partial_distribution = true;
        }
        Ok(row.row)
    }

    /// Runs chain-of-thought decoding on `prompt`, probing after the prompt
    /// (row 0) and after each generated step.
    pub fn run_cop(
        &self,
        question_id: &str,
        prompt: &str,
        cfg: &DecodeConfig,
        gold: Option<usize>,
    ) -> Result<ProbeTrace, ProbeError> {
        cfg.validate()?;
        let stop = self.stop.clone().with_budget(cfg.max_tokens_per_step);
        let mut flags = TraceFlags::default();
        let mut state = self.backend.start(prompt, cfg.seed)?;
        let mut rows = vec![self.probe(&mut state, &mut flags)?];
        let mut steps: Vec<String> = Vec::new();
        loop {
            if steps.len() == cfg.max_steps {
                flags.step_limit_reached = true;
                break;
            }
            let step = self.backend.generate_step(&mut state, cfg, &stop)?;
            if step.text.is_empty() {
                break;
            }
            flags.budget_exceeded |= step.budget_exceeded;
            let answered = extract_answer(&step.text, &self.target).is_some();
            steps.push(step.text);
            rows.push(self.probe(&mut state, &mut flags)?);
            if answered || step.finished {
                break;
            }
        }
        let matrix = ConfidenceMatrix::new(rows)?;
        let (j_star, source) = final_prediction(&steps.concat(), &self.target, &matrix);
        Ok(ProbeTrace::new(TraceParts {
            question_id: question_id.to_string(),
            prompt: prompt.to_string(),
            steps,
            matrix,
            final_prediction: j_star,
            prediction_source: source,
            gold,
            decode_config: cfg.clone(),
            backend_id: self.backend.descriptor().backend_id,
            probe_string: self.probe_string.clone(),
            flags,
        })?)
    }

    /// Same decoding loop without any probing. Used to confirm that probes
    /// leave generation untouched.
    pub fn generate_plain(
        &self,
        prompt: &str,
        cfg: &DecodeConfig,
    ) -> Result<Vec<String>, ProbeError> {
        cfg.validate()?;
        let stop = self.stop.clone().with_budget(cfg.max_tokens_per_step);
        let mut state = self.backend.start(prompt, cfg.seed)?;
        let mut steps = Vec::new();
        while steps.len() < cfg.max_steps {
            let step = self.backend.generate_step(&mut state, cfg, &stop)?;
            if step.text.is_empty() {
                break;
            }
            let answered = extract_answer(&step.text, &self.target).is_some();
            steps.push(step.text);
            if answered || step.finished {
                break;
            }
        }
        Ok(steps)
    }

    /// Exercises the backend contract on one prompt: probing must restore the
    /// state exactly, rows must be valid, and probed and plain decoding must
    /// produce the same steps.
    pub fn check_contract(
        &self,
        prompt: &str,
        cfg: &DecodeConfig,
    ) -> Result<ContractReport, ProbeError> {
        let mut state = self.backend.start(prompt, cfg.seed)?;
        let before = state.clone();
        let mut flags = TraceFlags::default();
        let first = self.probe(&mut state, &mut flags)?;
        if state != before {
            return Err(ProbeError::Contract(
                "probe changed the generation state".into(),
            ));
        }
        let again = self.probe(&mut state, &mut flags)?;
        if again != first {
            return Err(ProbeError::Contract(
                "repeated probe gave a different row".into(),
            ));
        }
        let trace = self.run_cop("contract-check", prompt, cfg, None)?;
        let plain = self.generate_plain(prompt, cfg)?;
        if plain != trace.steps() {
            return Err(ProbeError::Contract(
                "probed and unprobed decoding diverged".into(),
            ));
        }
        Ok(ContractReport {
            descriptor: self.backend.descriptor(),
            steps: trace.step_count(),
            partial_distribution: flags.partial_distribution || trace.flags().partial_distribution,
            first_row: first.probs().to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractReport {
    pub descriptor: crate::backend::BackendDescriptor,
    pub steps: usize,
    pub partial_distribution: bool,
    pub first_row: Vec<f64>,
}
