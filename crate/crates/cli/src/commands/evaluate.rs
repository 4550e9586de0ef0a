use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;
use swintempo_core::candidates::{read_candidates, NoduleCandidate};
use swintempo_core::error::{CoreError, Result};
use swintempo_core::froc::{froc, match_series, scored_labels, write_plot, write_report, FROCReport, MatchLabel};
use swintempo_core::volume::{read_annotations, Annotation};

use crate::commands::{ensure_dir, require_file, say};
use crate::config::{echo_effective, pick, require, EvaluateSection};
use crate::opts::EvaluateOpts;

#[derive(Serialize)]
struct Effective {
    candidates: PathBuf,
    annotations: PathBuf,
    n_scans: usize,
    out: PathBuf,
    duplicates_as_fp: bool,
}

pub fn run(opts: EvaluateOpts, file: EvaluateSection, seed: Option<u64>) -> Result<()> {
    let eff = Effective {
        candidates: require(opts.candidates, file.candidates, "--candidates")?,
        annotations: require(opts.annotations, file.annotations, "--annotations")?,
        n_scans: require(opts.n_scans, file.n_scans, "--n-scans")?,
        out: require(opts.out, file.out, "--out")?,
        duplicates_as_fp: pick(opts.duplicates_as_fp, file.duplicates_as_fp, true),
    };
    require_file(&eff.candidates)?;
    require_file(&eff.annotations)?;
    let cands = read_candidates(&eff.candidates)?;
    let anns = read_annotations(&eff.annotations)?;

    let report = score(&cands, &anns, eff.n_scans, eff.duplicates_as_fp)?;
    ensure_dir(&eff.out)?;
    write_report(&eff.out.join("froc.json"), &report)?;
    write_plot(&eff.out.join("froc.svg"), &report)?;
    echo_effective(&eff.out, seed, "evaluate", &eff)?;

    say!("cpm {:.4} over {} scans", report.cpm, eff.n_scans);
    for (rate, sens) in &report.sensitivities {
        say!("  sensitivity at {rate} fp/scan: {sens:.4}");
    }
    Ok(())
}

/// Group by series, match greedily per series, and sweep the pooled scores.
pub fn score(
    cands: &[NoduleCandidate],
    anns: &[Annotation],
    n_scans: usize,
    duplicates_as_fp: bool,
) -> Result<FROCReport> {
    let mut by_series: BTreeMap<&str, (Vec<NoduleCandidate>, Vec<Annotation>)> = BTreeMap::new();
    for c in cands {
        by_series.entry(&c.series_id).or_default().0.push(c.clone());
    }
    for a in anns {
        by_series.entry(&a.series_id).or_default().1.push(a.clone());
    }
    if by_series.len() > n_scans {
        return Err(CoreError::Validation(format!(
            "n_scans is {n_scans} but the files mention {} distinct series",
            by_series.len()
        )));
    }

    let mut scored: Vec<(f64, MatchLabel)> = Vec::with_capacity(cands.len());
    for (series_cands, series_anns) in by_series.values() {
        let m = match_series(series_cands, series_anns, duplicates_as_fp);
        scored.extend(scored_labels(series_cands, &m));
    }
    froc(&scored, anns.len(), n_scans)
}
