use super::report::{fmt_f64, Report};
use crate::analysis::{gaussian_smooth, AnalysisError, DecilePoint};
use crate::trace::ProbeTrace;

/// `(step, p)` pairs of the final prediction's confidence, one per probe.
pub fn trajectory_series(trace: &ProbeTrace) -> Report {
    let mut r = Report::new(&["step", "p"]);
    for (i, p) in trace.final_column().iter().enumerate() {
        r.push(vec![i.to_string(), fmt_f64(*p)]);
    }
    r
}

pub fn decile_series(curve: &[DecilePoint]) -> Report {
    let mut r = Report::new(&["section", "mean_score", "accuracy", "count"]);
    for (i, d) in curve.iter().enumerate() {
        r.push(vec![
            (i + 1).to_string(),
            fmt_f64(d.mean_score),
            fmt_f64(d.accuracy),
            d.count.to_string(),
        ]);
    }
    r
}

/// One group of traces on an ordered axis (e.g. grade levels).
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub group: String,
    pub n: usize,
    pub ear: f64,
    pub accuracy: f64,
}

/// EAR and accuracy per group, with Gaussian-smoothed copies of both series.
pub fn ear_curve(points: &[CurvePoint], sigma: f64) -> Result<Report, AnalysisError> {
    let ear: Vec<f64> = points.iter().map(|p| p.ear).collect();
    let acc: Vec<f64> = points.iter().map(|p| p.accuracy).collect();
    let ear_s = gaussian_smooth(&ear, sigma)?;
    let acc_s = gaussian_smooth(&acc, sigma)?;
    let mut r = Report::new(&[
        "x",
        "group",
        "n",
        "ear",
        "accuracy",
        "ear_smoothed",
        "accuracy_smoothed",
    ]);
    for (i, p) in points.iter().enumerate() {
        r.push(vec![
            i.to_string(),
            p.group.clone(),
            p.n.to_string(),
            fmt_f64(p.ear),
            fmt_f64(p.accuracy),
            fmt_f64(ear_s[i]),
            fmt_f64(acc_s[i]),
        ]);
    }
    Ok(r)
}
