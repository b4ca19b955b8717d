//! Independent reference implementations used as test oracles. Shared with
//! the acceptance suite in the cli crate.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cop_core::tree::{CopFeatures, Verdict};
use cop_core::{ConfidenceMatrix, ProbeTrace};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Pearson r from z-scores with the n-1 denominator.
pub fn naive_pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let sd =
        |v: &[f64], m: f64| (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt();
    let (mx, my) = (mean(xs), mean(ys));
    let (sx, sy) = (sd(xs, mx), sd(ys, my));
    xs.iter()
        .zip(ys)
        .map(|(x, y)| ((x - mx) / sx) * ((y - my) / sy))
        .sum::<f64>()
        / (n - 1.0)
}

/// Direct convolution over an explicitly mirrored copy of the series.
pub fn naive_smooth(series: &[f64], sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).ceil() as usize;
    let weights: Vec<f64> = (0..=2 * r)
        .map(|i| {
            let x = i as f64 - r as f64;
            (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let norm: f64 = weights.iter().sum();
    // mirrored copies alternate outward: ...| s | rev | s | rev | s |...
    let fwd = series.to_vec();
    let rev: Vec<f64> = series.iter().rev().copied().collect();
    let (mut left, mut right) = (Vec::new(), Vec::new());
    let mut use_rev = true;
    while left.len() < r {
        let block = if use_rev { &rev } else { &fwd };
        left = [block.clone(), left].concat();
        right.extend_from_slice(block);
        use_rev = !use_rev;
    }
    let mut padded = left[left.len() - r..].to_vec();
    padded.extend_from_slice(series);
    padded.extend_from_slice(&right[..r]);
    (0..series.len())
        .map(|i| (0..=2 * r).map(|j| weights[j] * padded[i + j]).sum::<f64>() / norm)
        .collect()
}

/// P(T >= t) for Student's t with integer degrees of freedom, from the
/// finite trigonometric series for P(|T| < t).
pub fn t_upper_tail(t: f64, df: usize) -> f64 {
    let nu = df as f64;
    let theta = (t.abs() / nu.sqrt()).atan();
    let (s, c) = (theta.sin(), theta.cos());
    let within = if df % 2 == 1 {
        let mut sum = 0.0;
        if df > 1 {
            let mut term = c;
            sum = term;
            let mut j = 3;
            while j < df {
                term *= c * c * (j - 1) as f64 / j as f64;
                sum += term;
                j += 2;
            }
        }
        2.0 / std::f64::consts::PI * (theta + s * sum)
    } else {
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut j = 2;
        while j <= df - 2 {
            term *= c * c * (j - 1) as f64 / j as f64;
            sum += term;
            j += 2;
        }
        s * sum
    };
    if t >= 0.0 {
        (1.0 - within) / 2.0
    } else {
        (1.0 + within) / 2.0
    }
}

/// (t, one-tailed p, Cohen's d, df) for the paired test of a > b.
pub fn naive_paired_t(a: &[f64], b: &[f64]) -> (f64, f64, f64, usize) {
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = d.iter().sum::<f64>() / n as f64;
    let ss: f64 = d.iter().map(|x| (x - m) * (x - m)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    let se = sd / (n as f64).sqrt();
    let t = m / se;
    (t, t_upper_tail(t, n - 1), m / sd, n - 1)
}

/// Early answering by definition: the first index holding each row's
/// maximum must equal the final prediction in every row.
pub fn brute_early_answering(rows: &[Vec<f64>], final_prediction: usize) -> bool {
    for row in rows {
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best != final_prediction {
            return false;
        }
    }
    true
}

/// Random probability row of width `w`, quantized to multiples of 1/`q` so
/// that ties show up often. The row sums to at most 1.
pub fn random_row(r: &mut ChaCha8Rng, w: usize, q: u32) -> Vec<f64> {
    let raw: Vec<u32> = (0..w).map(|_| r.random_range(0..=q)).collect();
    let total: u32 = raw.iter().sum::<u32>().max(1);
    raw.iter()
        .map(|&x| x as f64 / total.max(q) as f64)
        .collect()
}

pub fn random_trace(r: &mut ChaCha8Rng, k: usize, w: usize) -> ProbeTrace {
    let rows: Vec<Vec<f64>> = (0..=k).map(|_| random_row(r, w, 20)).collect();
    let last = rows[k].clone();
    let jstar = if r.random_bool(0.5) {
        brute_argmax(&last)
    } else {
        r.random_range(0..w)
    };
    let m = ConfidenceMatrix::from_rows(rows).unwrap();
    ProbeTrace::from_matrix("r", m, jstar, Some(r.random_range(0..w))).unwrap()
}

pub fn brute_argmax(row: &[f64]) -> usize {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    row.iter().position(|&p| p == max).unwrap()
}

/// Training accuracy of the best single-threshold classifier over all
/// features, thresholds and leaf labelings, including the constant one.
pub fn best_stump_accuracy(samples: &[(CopFeatures, Verdict)]) -> f64 {
    let n = samples.len() as f64;
    let correct = samples.iter().filter(|s| s.1.is_correct()).count();
    let mut best = correct.max(samples.len() - correct);
    for f in 0..3 {
        let mut values: Vec<f64> = samples.iter().map(|s| s.0.as_array()[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for &thr in &values {
            let (mut lc, mut li, mut rc, mut ri) = (0, 0, 0, 0);
            for (x, v) in samples {
                let left = x.as_array()[f] <= thr;
                match (left, v.is_correct()) {
                    (true, true) => lc += 1,
                    (true, false) => li += 1,
                    (false, true) => rc += 1,
                    (false, false) => ri += 1,
                }
            }
            best = best.max(usize::max(lc, li) + usize::max(rc, ri));
        }
    }
    best as f64 / n
}
