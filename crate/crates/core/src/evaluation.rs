//! ROC curves and the false-positive rate at 95% recall.

use std::io::Write;
use std::path::Path;

use ndarray::Axis;

use crate::binio;
use crate::error::{Error, Result};
use crate::matcher_net::{forward, pair_input, NetworkParams, PairSample};

pub const TARGET_RECALL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    /// Items scoring `>= threshold` are predicted positive.
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Ordered by decreasing threshold, from (0,0) at +inf to (1,1).
    pub points: Vec<RocPoint>,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl RocCurve {
    /// Area under the curve by the trapezoid rule.
    pub fn auc(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum()
    }
}

/// ROC curve with one point per distinct score; equal scores enter
/// together.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Evaluation(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Evaluation("NaN score".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Evaluation("labels must be 0 or 1".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Evaluation(format!(
            "ROC needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: s,
            tpr: tp as f64 / n_pos as f64,
            fpr: fp as f64 / n_neg as f64,
        });
    }
    Ok(RocCurve { points, n_pos, n_neg })
}

/// FPR at the given TPR, interpolating linearly between neighboring curve
/// points. A point lying exactly on the target returns its own FPR.
pub fn fpr_at_tpr(curve: &RocCurve, target: f64) -> f64 {
    let pts = &curve.points;
    for (i, p) in pts.iter().enumerate() {
        if p.tpr == target {
            return p.fpr;
        }
        if p.tpr > target {
            let prev = &pts[i - 1];
            let frac = (target - prev.tpr) / (p.tpr - prev.tpr);
            return prev.fpr + frac * (p.fpr - prev.fpr);
        }
    }
    pts.last().map_or(1.0, |p| p.fpr)
}

/// False-positive rate at 95% true-positive rate.
pub fn error_at_95(curve: &RocCurve) -> f64 {
    fpr_at_tpr(curve, TARGET_RECALL)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub curve: RocCurve,
    pub error95: f64,
    /// Accuracy at score threshold 0.5.
    pub accuracy: f64,
    pub scores: Vec<f64>,
}

/// Scores every pair and summarizes.
pub fn evaluate_model(p: &NetworkParams, pairs: &[PairSample]) -> Result<EvalResult> {
    let mut scores = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(1024) {
        let mut x = ndarray::Array2::zeros((chunk.len(), p.input_dim));
        for (r, s) in chunk.iter().enumerate() {
            if 2 * s.code_a.k() != p.input_dim {
                return Err(Error::Shape(format!(
                    "network expects codes of length {}, got {}",
                    p.input_dim / 2,
                    s.code_a.k()
                )));
            }
            x.index_axis_mut(Axis(0), r).assign(&pair_input(&s.code_a, &s.code_b)?);
        }
        scores.extend(forward(p, x.view())?);
    }
    let labels: Vec<u8> = pairs.iter().map(|s| s.label).collect();
    let curve = roc_curve(&scores, &labels)?;
    let hits = scores
        .iter()
        .zip(&labels)
        .filter(|(s, l)| (**s >= 0.5) == (**l == 1))
        .count();
    Ok(EvalResult {
        error95: error_at_95(&curve),
        accuracy: hits as f64 / labels.len() as f64,
        curve,
        scores,
    })
}

pub fn write_roc_csv(curve: &RocCurve, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "threshold,tpr,fpr").unwrap();
    for p in &curve.points {
        writeln!(out, "{},{},{}", p.threshold, p.tpr, p.fpr).unwrap();
    }
    binio::write_file(path, &out)
}

/// Gnuplot-friendly `fpr tpr` columns.
pub fn write_roc_dat(curve: &RocCurve, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "# fpr tpr threshold").unwrap();
    for p in &curve.points {
        writeln!(out, "{} {} {}", p.fpr, p.tpr, p.threshold).unwrap();
    }
    binio::write_file(path, &out)
}

pub fn metrics_text(r: &EvalResult) -> String {
    format!(
        "{{\n  \"error95\": {},\n  \"accuracy\": {},\n  \"auc\": {},\n  \"n_pos\": {},\n  \"n_neg\": {}\n}}\n",
        r.error95,
        r.accuracy,
        r.curve.auc(),
        r.curve.n_pos,
        r.curve.n_neg
    )
}

pub fn write_metrics(r: &EvalResult, path: &Path) -> Result<()> {
    binio::write_file(path, metrics_text(r).as_bytes())
}
