//! From per-slice probability maps to 3D spherical nodule candidates:
//! threshold, per-slice connected components, density clustering across
//! slices, and the candidate CSV format.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Sigmoid output for one slice.
#[derive(Debug, Clone)]
pub struct ProbabilityMap {
    /// `[H, W]`, values in [0, 1].
    pub values: Array2<f32>,
    pub slice_index: usize,
    pub series_id: String,
}

impl ProbabilityMap {
    pub fn validate(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(CoreError::Validation(format!(
                "probability map {}#{} has values outside [0, 1]",
                self.series_id, self.slice_index
            )));
        }
        Ok(())
    }
}

/// One thresholded component on one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceDetection {
    pub slice_index: usize,
    /// `(x, y)` pixel coordinates, unweighted mean over the component.
    pub centroid_px: (f64, f64),
    pub area_px: f64,
    pub radius2d_px: f64,
    pub score: f64,
}

/// A fused 3D detection in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct NoduleCandidate {
    pub series_id: String,
    /// `(x, y, z)` world mm.
    pub center_mm: (f64, f64, f64),
    pub radius_mm: f64,
    pub probability: f64,
}

/// Pixels strictly above the threshold.
pub fn threshold_map(pm: &ProbabilityMap, t: f64) -> Array2<bool> {
    pm.values.mapv(|v| f64::from(v) > t)
}

/// 8-connected foreground components, each as its pixel set in `(row, col)`
/// scan order; components are ordered by their first pixel in scan order.
pub fn find_contours(mask: &Array2<bool>) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = mask.dim();
    let mut seen = Array2::<bool>::default((h, w));
    let mut components = Vec::new();
    let mut queue = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !mask[(r, c)] || seen[(r, c)] {
                continue;
            }
            seen[(r, c)] = true;
            queue.push((r, c));
            let mut pixels = Vec::new();
            while let Some((pr, pc)) = queue.pop() {
                pixels.push((pr, pc));
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (nr, nc) = (pr as i64 + dr, pc as i64 + dc);
                        if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                            continue;
                        }
                        let n = (nr as usize, nc as usize);
                        if mask[n] && !seen[n] {
                            seen[n] = true;
                            queue.push(n);
                        }
                    }
                }
            }
            pixels.sort_unstable();
            components.push(pixels);
        }
    }
    components
}

/// Collapse one component to a detection: max score, unweighted centroid,
/// and the radius of the equal-area disc.
pub fn summarize_contour(
    component: &[(usize, usize)],
    pm: &ProbabilityMap,
) -> SliceDetection {
    assert!(!component.is_empty(), "components are non-empty by construction");
    let area = component.len() as f64;
    let (mut sx, mut sy, mut score) = (0.0, 0.0, f64::NEG_INFINITY);
    for &(r, c) in component {
        sx += c as f64;
        sy += r as f64;
        score = score.max(f64::from(pm.values[(r, c)]));
    }
    SliceDetection {
        slice_index: pm.slice_index,
        centroid_px: (sx / area, sy / area),
        area_px: area,
        radius2d_px: (area / std::f64::consts::PI).sqrt(),
        score,
    }
}

/// Smallest candidate radius emitted, in mm.
pub const RADIUS_FLOOR_MM: f64 = 1.0;

fn detection_point(d: &SliceDetection, spacing: (f64, f64, f64)) -> [f64; 3] {
    [d.centroid_px.0 * spacing.2, d.centroid_px.1 * spacing.1, d.slice_index as f64 * spacing.0]
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Neighbor lookup on a uniform grid of cell size eps: any point within
/// eps of a query lies in the query's own or an adjacent cell.
struct CellIndex {
    eps: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl CellIndex {
    fn build(points: &[[f64; 3]], eps: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::cell(p, eps)).or_default().push(i);
        }
        CellIndex { eps, cells }
    }

    fn cell(p: &[f64; 3], eps: f64) -> [i64; 3] {
        [(p[0] / eps).floor() as i64, (p[1] / eps).floor() as i64, (p[2] / eps).floor() as i64]
    }

    /// Indices within eps of point `i`, in ascending index order, self
    /// included.
    fn neighbors(&self, points: &[[f64; 3]], i: usize) -> Vec<usize> {
        let home = Self::cell(&points[i], self.eps);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let key = [home[0] + dx, home[1] + dy, home[2] + dz];
                    if let Some(bucket) = self.cells.get(&key) {
                        for &j in bucket {
                            if dist2(points[i], points[j]) <= self.eps * self.eps {
                                out.push(j);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Density clustering of the detections into per-cluster point-index sets.
/// Core points have at least `min_pts` neighbors within eps (themselves
/// included); clusters grow from core points in input order, border points
/// join the first cluster that reaches them, and leftover non-core points
/// are noise. Returns clusters in creation order; noise indices are not
/// returned.
pub fn dbscan(points: &[[f64; 3]], eps: f64, min_pts: usize) -> Vec<Vec<usize>> {
    assert!(eps > 0.0, "eps must be positive");
    let index = CellIndex::build(points, eps);
    let mut assigned = vec![false; points.len()];
    let mut clusters = Vec::new();
    for i in 0..points.len() {
        if assigned[i] {
            continue;
        }
        let seed = index.neighbors(points, i);
        if seed.len() < min_pts {
            continue;
        }
        assigned[i] = true;
        let mut cluster = vec![i];
        let mut queue: Vec<usize> = seed;
        let mut qi = 0;
        while qi < queue.len() {
            let j = queue[qi];
            qi += 1;
            if assigned[j] {
                continue;
            }
            assigned[j] = true;
            cluster.push(j);
            let reach = index.neighbors(points, j);
            if reach.len() >= min_pts {
                queue.extend(reach);
            }
        }
        cluster.sort_unstable();
        clusters.push(cluster);
    }
    clusters
}

/// Fuse per-slice detections into 3D candidates by clustering their
/// centroids in spacing-scaled mm (origin left to the caller). Cluster
/// center is the unweighted mean of member points; the radius covers the
/// widest member disc and the cluster's z-extent, floored at 1 mm;
/// probability is the best member score.
pub fn cluster_3d(
    dets: &[SliceDetection],
    eps: f64,
    min_pts: usize,
    spacing_mm: (f64, f64, f64),
) -> Vec<NoduleCandidate> {
    let points: Vec<[f64; 3]> = dets.iter().map(|d| detection_point(d, spacing_mm)).collect();
    dbscan(&points, eps, min_pts)
        .into_iter()
        .map(|members| {
            let n = members.len() as f64;
            let mut center = [0.0; 3];
            let (mut prob, mut r2d, mut zlo, mut zhi) =
                (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
            for &m in &members {
                for ax in 0..3 {
                    center[ax] += points[m][ax] / n;
                }
                prob = prob.max(dets[m].score);
                r2d = r2d.max(dets[m].radius2d_px * spacing_mm.2);
                zlo = zlo.min(points[m][2]);
                zhi = zhi.max(points[m][2]);
            }
            NoduleCandidate {
                series_id: String::new(),
                center_mm: (center[0], center[1], center[2]),
                radius_mm: r2d.max((zhi - zlo) / 2.0).max(RADIUS_FLOOR_MM),
                probability: prob,
            }
        })
        .collect()
}

/// Geometry needed to place candidates in world coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Geometry {
    /// `(sz, sy, sx)` mm.
    pub spacing_mm: (f64, f64, f64),
    /// `(oz, oy, ox)` mm.
    pub origin_mm: (f64, f64, f64),
}

/// Full extraction over one series' slice stack, ascending z. Candidates
/// come back in world mm, sorted by descending probability with ties
/// broken by ascending (z, y, x) center.
pub fn extract(
    maps: &[ProbabilityMap],
    t: f64,
    eps: f64,
    min_pts: usize,
    geom: Geometry,
) -> Result<Vec<NoduleCandidate>> {
    let mut dets = Vec::new();
    let mut series_id = None;
    for pm in maps {
        pm.validate()?;
        match &series_id {
            None => series_id = Some(pm.series_id.clone()),
            Some(id) if *id != pm.series_id => {
                return Err(CoreError::Validation(format!(
                    "extract handles one series at a time: saw {id} and {}",
                    pm.series_id
                )));
            }
            Some(_) => {}
        }
        let mask = threshold_map(pm, t);
        for component in find_contours(&mask) {
            dets.push(summarize_contour(&component, pm));
        }
    }
    let series_id = series_id.unwrap_or_default();

    let mut cands = cluster_3d(&dets, eps, min_pts, geom.spacing_mm);
    for c in &mut cands {
        c.series_id = series_id.clone();
        c.center_mm = (
            c.center_mm.0 + geom.origin_mm.2,
            c.center_mm.1 + geom.origin_mm.1,
            c.center_mm.2 + geom.origin_mm.0,
        );
    }
    sort_candidates(&mut cands);
    Ok(cands)
}

/// Descending probability, ties by ascending (z, y, x) center.
pub fn sort_candidates(cands: &mut [NoduleCandidate]) {
    cands.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then(a.center_mm.2.total_cmp(&b.center_mm.2))
            .then(a.center_mm.1.total_cmp(&b.center_mm.1))
            .then(a.center_mm.0.total_cmp(&b.center_mm.0))
    });
}

#[derive(Serialize, Deserialize)]
struct CandidateRow {
    series_id: String,
    coord_x: f64,
    coord_y: f64,
    coord_z: f64,
    radius_mm: f64,
    probability: f64,
}

/// Write candidates as CSV (`series_id,coord_x,coord_y,coord_z,radius_mm,
/// probability`), one row per candidate in the given order.
pub fn write_candidates(path: &Path, cands: &[NoduleCandidate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    if cands.is_empty() {
        // serde-driven writers only emit headers with the first record.
        w.write_record(["series_id", "coord_x", "coord_y", "coord_z", "radius_mm", "probability"])
            .map_err(|e| csv_io(path, e))?;
    }
    for c in cands {
        w.serialize(CandidateRow {
            series_id: c.series_id.clone(),
            coord_x: c.center_mm.0,
            coord_y: c.center_mm.1,
            coord_z: c.center_mm.2,
            radius_mm: c.radius_mm,
            probability: c.probability,
        })
        .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))?;
    Ok(())
}

pub fn read_candidates(path: &Path) -> Result<Vec<NoduleCandidate>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in r.deserialize::<CandidateRow>().enumerate() {
        let row = rec.map_err(|e| CoreError::Parse {
            line: i as u64 + 2,
            msg: format!("{path:?}: {e}"),
        })?;
        if !(row.radius_mm > 0.0) || !(0.0..=1.0).contains(&row.probability) {
            return Err(CoreError::Parse {
                line: i as u64 + 2,
                msg: format!("{path:?}: radius must be positive and probability in [0, 1]"),
            });
        }
        out.push(NoduleCandidate {
            series_id: row.series_id,
            center_mm: (row.coord_x, row.coord_y, row.coord_z),
            radius_mm: row.radius_mm,
            probability: row.probability,
        });
    }
    Ok(out)
}

fn csv_io(path: &Path, e: csv::Error) -> CoreError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CoreError::io(path, io),
        other => CoreError::Format(format!("{path:?}: {other:?}")),
    }
}
