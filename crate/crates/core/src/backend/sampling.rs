//! Token selection from a next-token distribution.
//!
//! Greedy picks the most probable token (lowest id on ties). Sampling applies
//! top-k, then temperature, then nucleus (top-p) filtering, and draws from the
//! renormalized remainder.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{BackendError, Distribution};
use crate::trace::{DecodeConfig, DecodeMode, TokenId};

pub fn choose_token(
    dist: &Distribution,
    cfg: &DecodeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TokenId, BackendError> {
    match cfg.mode {
        DecodeMode::Greedy => greedy(dist),
        DecodeMode::Sample => sample(dist, cfg, rng),
    }
}

fn greedy(dist: &Distribution) -> Result<TokenId, BackendError> {
    // entries are sorted by id, so a strict comparison keeps the lowest id
    let mut best: Option<(TokenId, f64)> = None;
    for &(t, p) in dist.entries() {
        if best.is_none_or(|(_, bp)| p > bp) {
            best = Some((t, p));
        }
    }
    best.map(|(t, _)| t)
        .ok_or_else(|| BackendError::InvalidDistribution("empty distribution".into()))
}

/// Candidate tokens and weights after top-k, temperature and top-p filtering,
/// ordered by decreasing probability.
pub fn filtered_candidates(dist: &Distribution, cfg: &DecodeConfig) -> Vec<(TokenId, f64)> {
    let mut cands: Vec<(TokenId, f64)> = dist
        .entries()
        .iter()
        .copied()
        .filter(|&(_, p)| p > 0.0)
        .collect();
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if cfg.top_k > 0 {
        cands.truncate(cfg.top_k as usize);
    }
    let inv_t = 1.0 / cfg.temperature;
    for c in &mut cands {
        c.1 = c.1.powf(inv_t);
    }
    let total: f64 = cands.iter().map(|c| c.1).sum();
    if total > 0.0 {
        for c in &mut cands {
            c.1 /= total;
        }
    }
    if cfg.top_p < 1.0 {
        let mut cum = 0.0;
        let mut keep = cands.len();
        for (i, c) in cands.iter().enumerate() {
            cum += c.1;
            if cum >= cfg.top_p {
                keep = i + 1;
                break;
            }
        }
        cands.truncate(keep);
    }
    cands
}

fn sample(
    dist: &Distribution,
    cfg: &DecodeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TokenId, BackendError> {
    let cands = filtered_candidates(dist, cfg);
    let total: f64 = cands.iter().map(|c| c.1).sum();
    if cands.is_empty() || total <= 0.0 {
        return Err(BackendError::InvalidDistribution(
            "no token with positive probability".into(),
        ));
    }
    let mut u = rng.random::<f64>() * total;
    for &(t, w) in &cands {
        if u < w {
            return Ok(t);
        }
        u -= w;
    }
    Ok(cands[cands.len() - 1].0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn dist(p: &[f64]) -> Distribution {
        Distribution::dense(p).unwrap()
    }

    #[test]
    fn greedy_breaks_ties_low() {
        let cfg = DecodeConfig::greedy();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            choose_token(&dist(&[0.2, 0.4, 0.4]), &cfg, &mut rng).unwrap(),
            TokenId(1)
        );
    }

    #[test]
    fn greedy_does_not_touch_rng() {
        let cfg = DecodeConfig::greedy();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let before = rng.clone();
        choose_token(&dist(&[0.5, 0.5]), &cfg, &mut rng).unwrap();
        assert_eq!(rng, before);
    }

    #[test]
    fn top_k_and_top_p_filtering() {
        let d = dist(&[0.05, 0.5, 0.3, 0.15]);
        let mut cfg = DecodeConfig::sampling(0);
        cfg.temperature = 1.0;
        cfg.top_p = 1.0;
        cfg.top_k = 2;
        let c = filtered_candidates(&d, &cfg);
        assert_eq!(
            c.iter().map(|c| c.0).collect::<Vec<_>>(),
            vec![TokenId(1), TokenId(2)]
        );
        cfg.top_k = 0;
        cfg.top_p = 0.8;
        let c = filtered_candidates(&d, &cfg);
        assert_eq!(c.len(), 2);
        cfg.top_p = 0.81;
        assert_eq!(filtered_candidates(&d, &cfg).len(), 3);
    }

    #[test]
    fn sampling_is_seed_deterministic_and_covers_support() {
        let d = dist(&[0.25, 0.25, 0.25, 0.25]);
        let cfg = DecodeConfig::sampling(0);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..64)
                .map(|_| choose_token(&d, &cfg, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
        let seen: std::collections::BTreeSet<_> = draw(11).into_iter().collect();
        assert_eq!(seen.len(), 4);
    }
}
