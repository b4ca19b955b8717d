use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::AnalysisError;

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<(), AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(AnalysisError::TooFewItems {
            needed: 2,
            found: xs.len(),
        });
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn is_constant(xs: &[f64]) -> bool {
    xs.iter().all(|&x| x == xs[0])
}

/// Sample Pearson correlation. Undefined, and rejected, when either series
/// is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, AnalysisError> {
    check_pair(xs, ys)?;
    if is_constant(xs) || is_constant(ys) {
        return Err(AnalysisError::DegenerateInput("constant series".into()));
    }
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Normalized order-0 Gaussian kernel with radius `ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>, AnalysisError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(AnalysisError::InvalidSigma(sigma));
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let mut w: Vec<f64> = (-radius..=radius)
        .map(|x| (-0.5 * (x as f64 / sigma).powi(2)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

/// Reflect-mode index (`d c b a | a b c d | d c b a`).
fn reflect(i: i64, n: i64) -> usize {
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Gaussian smoothing with reflected boundaries. Output has the input's length.
pub fn gaussian_smooth(series: &[f64], sigma: f64) -> Result<Vec<f64>, AnalysisError> {
    let kernel = gaussian_kernel(sigma)?;
    if series.is_empty() {
        return Ok(Vec::new());
    }
    let n = series.len() as i64;
    let radius = (kernel.len() / 2) as i64;
    Ok((0..n)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, w)| w * series[reflect(i + j as i64 - radius, n)])
                .sum()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// P(T >= t) under the null, i.e. the test of `a > b`.
    pub p_one_tailed: f64,
    pub cohens_d: f64,
    pub df: usize,
}

/// One-tailed paired t-test of `a > b` with Cohen's d on the differences.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest, AnalysisError> {
    check_pair(a, b)?;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if is_constant(&diffs) {
        return Err(AnalysisError::DegenerateInput(
            "all paired differences are equal".into(),
        ));
    }
    let n = diffs.len();
    let m = mean(&diffs);
    let var = diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let t = m / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| AnalysisError::DegenerateInput(e.to_string()))?;
    Ok(TTest {
        t,
        p_one_tailed: dist.sf(t),
        cohens_d: m / sd,
        df: n - 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pearson_identity_and_antisymmetry() {
        let xs = [1.0, 2.0, 4.0, 3.5, -1.0];
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &xs).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            pearson(&xs, &[2.0; 5]),
            Err(AnalysisError::DegenerateInput(_))
        ));
        assert!(matches!(
            pearson(&xs, &[1.0]),
            Err(AnalysisError::LengthMismatch(5, 1))
        ));
    }

    #[test]
    fn smoothing_constant_and_impulse() {
        let flat = gaussian_smooth(&[0.37; 12], 1.0).unwrap();
        assert!(flat.iter().all(|&v| v == 0.37 || (v - 0.37).abs() < 1e-16));
        let mut impulse = vec![0.0; 21];
        impulse[10] = 1.0;
        let out = gaussian_smooth(&impulse, 1.0).unwrap();
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for d in 1..=5 {
            assert_eq!(out[10 - d], out[10 + d]);
            assert!(out[10 + d] < out[10 + d - 1]);
        }
        assert_eq!(gaussian_kernel(1.0).unwrap().len(), 9);
        assert!(gaussian_smooth(&[1.0], 0.0).is_err());
    }

    #[test]
    fn reflect_indices() {
        let idx: Vec<usize> = (-4..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
    }

    #[test]
    fn t_test_zero_difference_is_degenerate() {
        let a = [0.1, 0.2, 0.3];
        assert!(matches!(
            paired_t_test(&a, &a),
            Err(AnalysisError::DegenerateInput(_))
        ));
    }

    #[test]
    fn t_test_textbook_case() {
        // diffs 1,1,1,1,3: mean 1.4, sd sqrt(0.8)
        let a = [2.0, 3.0, 4.0, 5.0, 9.0];
        let b = [1.0, 2.0, 3.0, 4.0, 6.0];
        let r = paired_t_test(&a, &b).unwrap();
        let sd = 0.8f64.sqrt();
        assert!((r.cohens_d - 1.4 / sd).abs() < 1e-12);
        assert!((r.t - 1.4 / (sd / 5f64.sqrt())).abs() < 1e-12);
        assert!(r.p_one_tailed > 0.0 && r.p_one_tailed < 0.05);
        let flipped = paired_t_test(&b, &a).unwrap();
        assert!((flipped.p_one_tailed + r.p_one_tailed - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn smoothing_preserves_mean(series in proptest::collection::vec(-10.0f64..10.0, 1..60), sigma in 0.3f64..4.0) {
            let out = gaussian_smooth(&series, sigma).unwrap();
            prop_assert_eq!(out.len(), series.len());
            prop_assert!((mean(&out) - mean(&series)).abs() < 1e-9);
        }

        #[test]
        fn pearson_affine_invariant(
            xs in proptest::collection::vec(-5.0f64..5.0, 3..40),
            ys_seed in proptest::collection::vec(-5.0f64..5.0, 40),
            a in 0.1f64..10.0,
            b in -10.0f64..10.0,
        ) {
            let ys = &ys_seed[..xs.len()];
            prop_assume!(!is_constant(&xs) && !is_constant(ys));
            let r = pearson(&xs, ys).unwrap();
            let mapped: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            prop_assume!(!is_constant(&mapped));
            prop_assert!((pearson(&mapped, ys).unwrap() - r).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }
}
