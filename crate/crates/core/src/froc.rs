//! Candidate-annotation matching, the FROC curve, sensitivities at the
//! seven false-positive rates, their mean (CPM), and the k-fold harness.

use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::candidates::NoduleCandidate;
use crate::error::{CoreError, Result};
use crate::rng;
use crate::volume::Annotation;

/// False-positive-per-scan rates whose sensitivities average into the CPM.
pub const FP_RATES: [f64; 7] = [0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

/// Outcome of one candidate under greedy matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchLabel {
    /// Claimed the annotation at this index (input order).
    TruePositive { annotation: usize },
    FalsePositive,
    /// Duplicate hit on an already-claimed annotation, excluded from FP
    /// counting when `duplicates_as_fp` is off.
    Ignored,
}

/// Per-candidate labels (aligned with the input order) and per-annotation
/// detected flags for one series.
#[derive(Debug, Clone)]
pub struct MatchResult {
    pub labels: Vec<MatchLabel>,
    pub detected: Vec<bool>,
}

/// Greedy matching in descending candidate probability: a candidate is a
/// hit when its center lies within diameter/2 (inclusive) of an unclaimed
/// annotation's center, claiming the nearest such annotation. A candidate
/// inside only already-claimed annotations is a duplicate; anything else
/// is a false positive.
pub fn match_series(
    cands: &[NoduleCandidate],
    anns: &[Annotation],
    duplicates_as_fp: bool,
) -> MatchResult {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        cands[b].probability.total_cmp(&cands[a].probability).then(a.cmp(&b))
    });

    let mut labels = vec![MatchLabel::FalsePositive; cands.len()];
    let mut detected = vec![false; anns.len()];
    for i in order {
        let c = &cands[i];
        let mut best: Option<(f64, usize)> = None;
        let mut duplicate = false;
        for (j, a) in anns.iter().enumerate() {
            let d2 = (c.center_mm.0 - a.center_mm.0).powi(2)
                + (c.center_mm.1 - a.center_mm.1).powi(2)
                + (c.center_mm.2 - a.center_mm.2).powi(2);
            let r = a.diameter_mm / 2.0;
            if d2 <= r * r {
                if detected[j] {
                    duplicate = true;
                } else if best.map_or(true, |(bd, _)| d2 < bd) {
                    best = Some((d2, j));
                }
            }
        }
        labels[i] = match best {
            Some((_, j)) => {
                detected[j] = true;
                MatchLabel::TruePositive { annotation: j }
            }
            None if duplicate && !duplicates_as_fp => MatchLabel::Ignored,
            None => MatchLabel::FalsePositive,
        };
    }
    MatchResult { labels, detected }
}

/// TP / (TP + FN).
pub fn sensitivity(tp: usize, fn_: usize) -> Result<f64> {
    if tp + fn_ == 0 {
        return Err(CoreError::Validation("sensitivity undefined with no positives".into()));
    }
    Ok(tp as f64 / (tp + fn_) as f64)
}

/// FROC curve, the seven rate sensitivities, and their mean.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FROCReport {
    /// Keyed by rate rendered as a decimal string, in `FP_RATES` order.
    pub sensitivities: IndexMap<String, f64>,
    pub cpm: f64,
    /// `(fp_per_scan, sensitivity)` operating points by falling threshold.
    pub curve: Vec<(f64, f64)>,
}

fn rate_key(rate: f64) -> String {
    // 0.125 -> "0.125", 1.0 -> "1"
    let s = format!("{rate}");
    s.strip_suffix(".0").map(str::to_owned).unwrap_or(s)
}

/// Sweep a global probability threshold over every candidate's score and
/// report (FP/scan, sensitivity) at each distinct value. The sensitivity
/// at a rate is the best operating point at or below that rate (an exact
/// step curve, no interpolation); CPM is the mean over the seven rates.
///
/// Greedy matching labels are prefix-stable under the sweep: dropping
/// low-probability candidates never changes the labels of the remaining
/// ones, so the cumulative pass below reproduces a from-scratch re-match
/// at every threshold.
pub fn froc(
    scored: &[(f64, MatchLabel)],
    n_annotations: usize,
    n_scans: usize,
) -> Result<FROCReport> {
    if n_scans == 0 {
        return Err(CoreError::Validation("froc needs at least one scan".into()));
    }
    if n_annotations == 0 {
        return Err(CoreError::Validation("froc needs at least one annotation".into()));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0).then(a.cmp(&b)));

    let mut curve = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scored[order[i]].0;
        // Consume the whole tie group: a threshold cannot split equal scores.
        while i < order.len() && scored[order[i]].0 == threshold {
            match scored[order[i]].1 {
                MatchLabel::TruePositive { .. } => tp += 1,
                MatchLabel::FalsePositive => fp += 1,
                MatchLabel::Ignored => {}
            }
            i += 1;
        }
        curve.push((fp as f64 / n_scans as f64, tp as f64 / n_annotations as f64));
    }

    let mut sensitivities = IndexMap::new();
    let mut sum = 0.0;
    for rate in FP_RATES {
        let sens = curve
            .iter()
            .filter(|(f, _)| *f <= rate)
            .map(|&(_, s)| s)
            .fold(0.0, f64::max);
        sum += sens;
        sensitivities.insert(rate_key(rate), sens);
    }
    Ok(FROCReport { sensitivities, cpm: sum / FP_RATES.len() as f64, curve })
}

/// Flatten one series' match result into (probability, label) pairs for
/// the global sweep.
pub fn scored_labels(cands: &[NoduleCandidate], m: &MatchResult) -> Vec<(f64, MatchLabel)> {
    cands.iter().zip(&m.labels).map(|(c, &l)| (c.probability, l)).collect()
}

pub fn write_report(path: &Path, report: &FROCReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| CoreError::Format(format!("report serialization: {e}")))?;
    std::fs::write(path, json + "\n").map_err(|e| CoreError::io(path, e))
}

pub fn read_report(path: &Path) -> Result<FROCReport> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CoreError::Format(format!("{path:?}: {e}")))
}

/// Render the FROC curve as a small self-contained SVG with the seven
/// rates marked on a logarithmic FP axis.
pub fn write_plot(path: &Path, report: &FROCReport) -> Result<()> {
    const W: f64 = 640.0;
    const H: f64 = 440.0;
    const ML: f64 = 60.0;
    const MB: f64 = 50.0;
    const MT: f64 = 20.0;
    const MR: f64 = 20.0;
    let (x0, x1) = (0.125f64.log2() - 0.5, 8f64.log2() + 0.5);
    let px = |fp: f64| ML + (fp.max(0.0625).log2() - x0) / (x1 - x0) * (W - ML - MR);
    let py = |s: f64| H - MB - s * (H - MB - MT);

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"monospace\" font-size=\"12\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    );
    for ys in 0..=10 {
        let s = ys as f64 / 10.0;
        let y = py(s);
        let _ = write!(
            svg,
            "<line x1=\"{ML}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#ddd\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{s:.1}</text>\n",
            W - MR,
            ML - 6.0,
            y + 4.0
        );
    }
    for rate in FP_RATES {
        let x = px(rate);
        let _ = write!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{MT}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#ddd\"/>\n\
             <text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            H - MB,
            H - MB + 16.0,
            rate_key(rate)
        );
    }
    let _ = write!(
        svg,
        "<line x1=\"{ML}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n\
         <line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{:.2}\" stroke=\"black\"/>\n\
         <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">false positives per scan</text>\n\
         <text x=\"14\" y=\"{:.2}\" transform=\"rotate(-90 14 {:.2})\" \
         text-anchor=\"middle\">sensitivity</text>\n",
        H - MB,
        W - MR,
        H - MB,
        H - MB,
        (ML + W - MR) / 2.0,
        H - 12.0,
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0
    );
    if !report.curve.is_empty() {
        let pts: Vec<String> =
            report.curve.iter().map(|&(f, s)| format!("{:.2},{:.2}", px(f), py(s))).collect();
        let _ = write!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#c22\" stroke-width=\"2\"/>\n",
            pts.join(" ")
        );
        for &(f, s) in &report.curve {
            let _ = write!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"#c22\"/>\n",
                px(f),
                py(s)
            );
        }
    }
    let _ = write!(svg, "<text x=\"{ML}\" y=\"{MT}\">cpm {:.4}</text>\n</svg>\n", report.cpm);
    std::fs::write(path, svg).map_err(|e| CoreError::io(path, e))
}

/// Deterministic, seed-keyed partition of the series ids into k folds
/// whose sizes differ by at most one (earlier folds take the remainder).
pub fn kfold_split(series_ids: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if k == 0 || k > series_ids.len() {
        return Err(CoreError::Validation(format!(
            "cannot split {} series into {k} folds",
            series_ids.len()
        )));
    }
    let mut shuffled = series_ids.to_vec();
    shuffled.shuffle(&mut rng::stream(seed, "kfold"));
    let (base, extra) = (shuffled.len() / k, shuffled.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(shuffled[at..at + size].to_vec());
        at += size;
    }
    Ok(folds)
}
