use std::fmt::Write as _;
use std::path::Path;

use crate::io::write_atomic;
use crate::{Error, Result};

pub const DET_CSV_HEADER: &str = "threshold,miss_rate,false_positive_rate";

/// Lower and upper false-positive rates of the area-under-DET integral.
pub const AUD_FPR_RANGE: (f64, f64) = (1e-3, 0.5);
const AUD_GRID: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub miss_rate: f64,
    pub false_positive_rate: f64,
}

/// Miss rate against false-positive rate as the threshold sweeps upward.
#[derive(Clone, Debug, PartialEq)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
}

fn sorted(scores: &[f64], what: &'static str) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput(what));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument(format!("{what} contain NaN")));
    }
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

fn rates_at(pos: &[f64], neg: &[f64], t: f64) -> (f64, f64) {
    let miss = pos.partition_point(|&s| s < t) as f64 / pos.len() as f64;
    let fp = (neg.len() - neg.partition_point(|&s| s < t)) as f64 / neg.len() as f64;
    (miss, fp)
}

/// Miss rate (positives below `t`) and false-positive rate (negatives at or
/// above `t`) for a single threshold.
pub fn det_point(scores_pos: &[f64], scores_neg: &[f64], t: f64) -> Result<(f64, f64)> {
    let pos = sorted(scores_pos, "positive scores")?;
    let neg = sorted(scores_neg, "negative scores")?;
    Ok(rates_at(&pos, &neg, t))
}

/// One point per distinct score in the union of both lists.
pub fn compute_det(scores_pos: &[f64], scores_neg: &[f64]) -> Result<DetCurve> {
    let pos = sorted(scores_pos, "positive scores")?;
    let neg = sorted(scores_neg, "negative scores")?;
    let mut thresholds: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    // -0.0 and 0.0 are the same threshold
    thresholds.dedup_by(|a, b| a == b);
    let points = thresholds
        .into_iter()
        .map(|t| {
            let (miss_rate, false_positive_rate) = rates_at(&pos, &neg, t);
            DetPoint {
                threshold: t,
                miss_rate,
                false_positive_rate,
            }
        })
        .collect();
    Ok(DetCurve { points })
}

impl DetCurve {
    /// Lowest miss rate reachable with a false-positive rate at most `fpr`.
    pub fn miss_at(&self, fpr: f64) -> f64 {
        // points run from high to low fpr with rising miss, so the first
        // qualifying point is the best one
        self.points
            .iter()
            .find(|p| p.false_positive_rate <= fpr)
            .map_or(1.0, |p| p.miss_rate)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(32 * (self.points.len() + 1));
        s.push_str(DET_CSV_HEADER);
        s.push('\n');
        for p in &self.points {
            let _ = writeln!(
                s,
                "{},{},{}",
                p.threshold, p.miss_rate, p.false_positive_rate
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Mean miss rate over false-positive rates in [`AUD_FPR_RANGE`], taken on
/// a log-spaced grid with the trapezoidal rule. Lower is better; 1 means no
/// detections and 0 means no misses anywhere in the range.
pub fn area_under_det(curve: &DetCurve) -> f64 {
    let (lo, hi) = (AUD_FPR_RANGE.0.ln(), AUD_FPR_RANGE.1.ln());
    let step = (hi - lo) / (AUD_GRID - 1) as f64;
    let ys: Vec<f64> = (0..AUD_GRID)
        .map(|i| curve.miss_at((lo + step * i as f64).exp()))
        .collect();
    let area: f64 = ys.windows(2).map(|w| 0.5 * (w[0] + w[1]) * step).sum();
    area / (hi - lo)
}

/// Reads `label score` lines, where label is `1`/`+1`/`P` for positives and
/// `-1`/`0`/`N` for negatives. Blank lines and `#` comments are skipped.
pub fn parse_scores(text: &str, path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message,
        };
        let mut fields = line.split([',', ' ', '\t']).filter(|f| !f.is_empty());
        let (Some(label), Some(score), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(err(format!("expected 'label score', got '{line}'")));
        };
        let score: f64 = score
            .parse()
            .map_err(|_| err(format!("bad score '{score}'")))?;
        if score.is_nan() {
            return Err(err("score is NaN".into()));
        }
        match label {
            "1" | "+1" | "P" | "p" => pos.push(score),
            "-1" | "0" | "N" | "n" => neg.push(score),
            other => return Err(err(format!("bad label '{other}'"))),
        }
    }
    Ok((pos, neg))
}
