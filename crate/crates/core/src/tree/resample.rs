use super::{extract_features, CopTree, TreeError};
use crate::analysis::cop_score;
use crate::probe::ProbeSession;
use crate::trace::{DecodeConfig, DecodeMode, ProbeTrace};

#[derive(Debug, Clone, PartialEq)]
pub struct ResampleOutcome {
    pub trace: ProbeTrace,
    pub n_samples: usize,
    pub accepted: bool,
}

/// Samples responses with seeds `cfg.seed, cfg.seed + 1, ...` until the tree
/// classifies one as correct. When all `max_samples` are rejected, returns the
/// rejected trace with the highest CoP score (earliest on ties).
pub fn resample_until_accept(
    session: &ProbeSession<'_>,
    question_id: &str,
    prompt: &str,
    gold: Option<usize>,
    cfg: &DecodeConfig,
    tree: &CopTree,
    max_samples: usize,
) -> Result<ResampleOutcome, TreeError> {
    if cfg.mode != DecodeMode::Sample {
        return Err(TreeError::InvalidInput(
            "resampling needs sample mode".into(),
        ));
    }
    if max_samples == 0 {
        return Err(TreeError::InvalidInput(
            "max_samples must be at least 1".into(),
        ));
    }
    let mut best: Option<(f64, ProbeTrace)> = None;
    for i in 0..max_samples {
        let trace = session.run_cop(
            question_id,
            prompt,
            &cfg.with_seed(cfg.seed.wrapping_add(i as u64)),
            gold,
        )?;
        if tree.classify(&extract_features(&trace)).is_correct() {
            return Ok(ResampleOutcome {
                trace,
                n_samples: i + 1,
                accepted: true,
            });
        }
        let score = cop_score(&trace);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, trace));
        }
    }
    Ok(ResampleOutcome {
        trace: best.expect("at least one sample").1,
        n_samples: max_samples,
        accepted: false,
    })
}
