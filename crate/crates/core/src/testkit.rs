//! Reference implementations for the test suites. Everything here trades
//! speed for obviousness: brute-force neighbor scans, per-threshold
//! re-matching, union-find components, and an attention oracle that
//! regroups tokens explicitly instead of rolling the grid. Production code
//! must never call into this module.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Ix1, Ix2};

use crate::candidates::NoduleCandidate;
use crate::froc::{FROCReport, MatchLabel, FP_RATES};
use crate::model::params::ParamStore;
use crate::volume::Annotation;

/// Attention parameters for one block, in matrix form.
pub struct AttnParams {
    /// `[c, 3c]`; output columns are q, k, v, each `heads * head_dim` wide.
    pub qkv_w: Array2<f64>,
    pub qkv_b: Array1<f64>,
    /// `[c, c]`.
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
    /// `[(2*win-1)^2, heads]`.
    pub table: Array2<f64>,
}

impl AttnParams {
    pub fn from_store(store: &ParamStore, prefix: &str) -> Self {
        let g2 = |n: &str| {
            store
                .get(&format!("{prefix}.{n}"))
                .expect("attention parameter present")
                .clone()
                .into_dimensionality::<Ix2>()
                .expect("matrix shaped")
        };
        let g1 = |n: &str| {
            store
                .get(&format!("{prefix}.{n}"))
                .expect("attention parameter present")
                .clone()
                .into_dimensionality::<Ix1>()
                .expect("vector shaped")
        };
        AttnParams {
            qkv_w: g2("qkv.weight"),
            qkv_b: g1("qkv.bias"),
            proj_w: g2("proj.weight"),
            proj_b: g1("proj.bias"),
            table: g2("rel_bias"),
        }
    }
}

/// Region id of one axis coordinate: tokens attend together exactly when
/// both their axis regions agree. The first `shift` coordinates wrap to
/// the end of the rolled grid and form their own region; the rest tile in
/// window-sized runs starting at `shift`.
fn region(a: usize, win: usize, shift: usize) -> usize {
    if a < shift {
        0
    } else {
        1 + (a - shift) / win
    }
}

/// Windowed multi-head self-attention computed by explicit regrouping:
/// partition the raw (unrolled, unpadded) token grid into attention groups,
/// run plain softmax attention inside each group with relative position
/// bias looked up from raw coordinate offsets, and scatter results back.
/// `x` is the flat `[gh*gw, c]` token grid.
pub fn regroup_attention(
    x: &Array2<f64>,
    (gh, gw): (usize, usize),
    heads: usize,
    win: usize,
    shifted: bool,
    p: &AttnParams,
) -> Array2<f64> {
    let c = x.ncols();
    assert_eq!(x.nrows(), gh * gw, "token count matches the grid");
    assert_eq!(c % heads, 0, "channels split evenly across heads");
    let hd = c / heads;
    let shift = if shifted { win / 2 } else { 0 };
    let side = 2 * win - 1;

    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for r in 0..gh {
        for q in 0..gw {
            groups
                .entry((region(r, win, shift), region(q, win, shift)))
                .or_default()
                .push(r * gw + q);
        }
    }

    let qkv = x.dot(&p.qkv_w) + &p.qkv_b;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = Array2::<f64>::zeros((gh * gw, c));
    for members in groups.values() {
        let m = members.len();
        let coords: Vec<(usize, usize)> = members.iter().map(|&t| (t / gw, t % gw)).collect();
        let mut ctx = Array2::<f64>::zeros((m, c));
        for h in 0..heads {
            let (qo, ko, vo) = (h * hd, c + h * hd, 2 * c + h * hd);
            for i in 0..m {
                let mut scores = vec![0.0; m];
                for j in 0..m {
                    let mut dot = 0.0;
                    for d in 0..hd {
                        dot += qkv[[members[i], qo + d]] * qkv[[members[j], ko + d]];
                    }
                    debug_assert!(
                        coords[i].0 + win > coords[j].0 && coords[i].1 + win > coords[j].1,
                        "group members stay within one window span"
                    );
                    let dr = coords[i].0 + win - 1 - coords[j].0;
                    let dc = coords[i].1 + win - 1 - coords[j].1;
                    scores[j] = dot * scale + p.table[[dr * side + dc, h]];
                }
                let mx = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = exps.iter().sum();
                for j in 0..m {
                    let w = exps[j] / z;
                    for d in 0..hd {
                        ctx[[i, h * hd + d]] += w * qkv[[members[j], vo + d]];
                    }
                }
            }
        }
        let proj = ctx.dot(&p.proj_w) + &p.proj_b;
        for (i, &t) in members.iter().enumerate() {
            out.row_mut(t).assign(&proj.row(i));
        }
    }
    out
}

/// 8-connected components by union-find over forward neighbor pairs.
/// Components come back ordered by their first pixel in scan order, each
/// as a scan-ordered pixel list.
pub fn union_find_components(mask: &Array2<bool>) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = mask.dim();
    let mut parent: Vec<usize> = (0..h * w).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    const FWD: [(i64, i64); 4] = [(0, 1), (1, -1), (1, 0), (1, 1)];
    for r in 0..h {
        for c in 0..w {
            if !mask[(r, c)] {
                continue;
            }
            for (dr, dc) in FWD {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                    continue;
                }
                if mask[(nr as usize, nc as usize)] {
                    let a = find(&mut parent, r * w + c);
                    let b = find(&mut parent, nr as usize * w + nc as usize);
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut by_root: indexmap::IndexMap<usize, Vec<(usize, usize)>> = indexmap::IndexMap::new();
    for r in 0..h {
        for c in 0..w {
            if mask[(r, c)] {
                let root = find(&mut parent, r * w + c);
                by_root.entry(root).or_default().push((r, c));
            }
        }
    }
    by_root.into_values().collect()
}

/// Density clustering with a quadratic neighbor scan; same growth and
/// border semantics as the production implementation, no spatial index.
pub fn dbscan_reference(points: &[[f64; 3]], eps: f64, min_pts: usize) -> Vec<Vec<usize>> {
    let nb = |i: usize| -> Vec<usize> {
        (0..points.len())
            .filter(|&j| {
                let d = [
                    points[i][0] - points[j][0],
                    points[i][1] - points[j][1],
                    points[i][2] - points[j][2],
                ];
                d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= eps * eps
            })
            .collect()
    };
    let mut cluster_of = vec![usize::MAX; points.len()];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..points.len() {
        if cluster_of[i] != usize::MAX {
            continue;
        }
        let seeds = nb(i);
        if seeds.len() < min_pts {
            continue;
        }
        let cid = clusters.len();
        clusters.push(vec![i]);
        cluster_of[i] = cid;
        let mut frontier = seeds;
        let mut k = 0;
        while k < frontier.len() {
            let j = frontier[k];
            k += 1;
            if cluster_of[j] != usize::MAX {
                continue;
            }
            cluster_of[j] = cid;
            clusters[cid].push(j);
            let reach = nb(j);
            if reach.len() >= min_pts {
                frontier.extend(reach);
            }
        }
        clusters[cid].sort_unstable();
    }
    clusters
}

/// One evaluation scene: every candidate and annotation of one series.
pub struct Scene {
    pub candidates: Vec<NoduleCandidate>,
    pub annotations: Vec<Annotation>,
}

/// Greedy hit assignment, recomputed from first principles: candidates in
/// descending probability (ties by list position) claim their nearest
/// annotation whose center lies within diameter/2, inclusive.
pub fn greedy_match_reference(
    cands: &[NoduleCandidate],
    anns: &[Annotation],
    duplicates_as_fp: bool,
) -> Vec<MatchLabel> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| cands[b].probability.total_cmp(&cands[a].probability).then(a.cmp(&b)));
    let mut claimed = vec![false; anns.len()];
    let mut labels = vec![MatchLabel::FalsePositive; cands.len()];
    for ci in order {
        let cand = &cands[ci];
        let mut nearest: Option<(f64, usize)> = None;
        let mut blocked = false;
        for (ai, ann) in anns.iter().enumerate() {
            let dx = cand.center_mm.0 - ann.center_mm.0;
            let dy = cand.center_mm.1 - ann.center_mm.1;
            let dz = cand.center_mm.2 - ann.center_mm.2;
            let d2 = dx * dx + dy * dy + dz * dz;
            let r = ann.diameter_mm / 2.0;
            if d2 <= r * r {
                if claimed[ai] {
                    blocked = true;
                } else if nearest.is_none_or(|(nd, _)| d2 < nd) {
                    nearest = Some((d2, ai));
                }
            }
        }
        labels[ci] = match nearest {
            Some((_, ai)) => {
                claimed[ai] = true;
                MatchLabel::TruePositive { annotation: ai }
            }
            None if blocked && !duplicates_as_fp => MatchLabel::Ignored,
            None => MatchLabel::FalsePositive,
        };
    }
    labels
}

/// FROC by exhaustive re-evaluation: at every distinct candidate
/// probability, matching is rerun from scratch on the surviving candidates
/// of every scene. Quadratic in candidate count; checks the cumulative
/// single-pass sweep.
pub fn exhaustive_froc(scenes: &[Scene], duplicates_as_fp: bool) -> FROCReport {
    let n_scans = scenes.len();
    let n_annotations: usize = scenes.iter().map(|s| s.annotations.len()).sum();
    let mut thresholds: Vec<f64> = scenes
        .iter()
        .flat_map(|s| s.candidates.iter().map(|c| c.probability))
        .collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    let mut curve = Vec::with_capacity(thresholds.len());
    for &t in &thresholds {
        let (mut tp, mut fp) = (0usize, 0usize);
        for scene in scenes {
            let kept: Vec<NoduleCandidate> = scene
                .candidates
                .iter()
                .filter(|c| c.probability >= t)
                .cloned()
                .collect();
            for label in greedy_match_reference(&kept, &scene.annotations, duplicates_as_fp) {
                match label {
                    MatchLabel::TruePositive { .. } => tp += 1,
                    MatchLabel::FalsePositive => fp += 1,
                    MatchLabel::Ignored => {}
                }
            }
        }
        curve.push((fp as f64 / n_scans as f64, tp as f64 / n_annotations as f64));
    }

    let mut sensitivities = indexmap::IndexMap::new();
    let mut sum = 0.0;
    for rate in FP_RATES {
        let sens = curve.iter().filter(|(f, _)| *f <= rate).map(|&(_, s)| s).fold(0.0, f64::max);
        sum += sens;
        let key = format!("{rate}");
        sensitivities.insert(key.strip_suffix(".0").map(str::to_owned).unwrap_or(key), sens);
    }
    FROCReport { sensitivities, cpm: sum / FP_RATES.len() as f64, curve }
}
