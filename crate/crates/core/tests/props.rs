//! Property tests for the invariants the pipeline leans on.

use std::collections::HashSet;

use ndarray::prelude::*;
use proptest::prelude::*;
use swintempo_core::candidates::{
    dbscan, extract, find_contours, threshold_map, Geometry, NoduleCandidate, ProbabilityMap,
};
use swintempo_core::froc::{froc, kfold_split, match_series, scored_labels, MatchLabel};
use swintempo_core::testkit::{dbscan_reference, union_find_components};
use swintempo_core::volume::{
    rasterize_annotations, read_volume, write_volume, Annotation, CTVolume,
};
use swintempo_autograd::{Arr, Graph};
use tempfile::tempdir;

fn lattice_map(h: usize, w: usize, cells: &[u32], slice_index: usize) -> ProbabilityMap {
    let values =
        Array2::from_shape_vec((h, w), cells.iter().map(|&v| v as f32 / 1000.0).collect())
            .expect("sized");
    ProbabilityMap { values, slice_index, series_id: "p".into() }
}

fn grid(max: usize) -> impl Strategy<Value = (usize, usize, Vec<u32>)> {
    (1..max, 1..max)
        .prop_flat_map(|(h, w)| (Just(h), Just(w), prop::collection::vec(0..=1000u32, h * w)))
}

proptest! {
    #[test]
    fn raising_the_threshold_only_clears_pixels(
        (h, w, cells) in grid(12),
        lo in 0.0..0.9f64,
        bump in 0.0..0.5f64,
    ) {
        let pm = lattice_map(h, w, &cells, 0);
        let wide = threshold_map(&pm, lo);
        let tight = threshold_map(&pm, lo + bump);
        for (t, w) in tight.iter().zip(wide.iter()) {
            prop_assert!(!t | w);
        }
    }

    #[test]
    fn components_partition_the_foreground((h, w, cells) in grid(12)) {
        let mask = Array2::from_shape_vec(
            (h, w),
            cells.iter().map(|&v| v > 500).collect(),
        ).expect("sized");
        let comps = find_contours(&mask);

        let mut seen = HashSet::new();
        for comp in &comps {
            prop_assert!(!comp.is_empty());
            for &p in comp {
                prop_assert!(mask[p], "component pixels are foreground");
                prop_assert!(seen.insert(p), "components are disjoint");
            }
        }
        let foreground = mask.indexed_iter().filter(|(_, &b)| b).count();
        prop_assert_eq!(seen.len(), foreground, "components cover the foreground");

        prop_assert_eq!(comps, union_find_components(&mask));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn density_clustering_always_matches_the_reference(
        points in prop::collection::vec(prop::array::uniform3(-10.0..10.0f64), 0..50),
        eps in 0.2..5.0f64,
        min_pts in 1..5usize,
    ) {
        prop_assert_eq!(
            dbscan(&points, eps, min_pts),
            dbscan_reference(&points, eps, min_pts)
        );
    }

    #[test]
    fn min_pts_one_clustering_partitions_every_point(
        points in prop::collection::vec(prop::array::uniform3(-10.0..10.0f64), 0..40),
        eps in 0.2..5.0f64,
    ) {
        // With min_pts 1 every point is a core point, so nothing is noise.
        let clusters = dbscan(&points, eps, 1);
        let mut seen = HashSet::new();
        for cluster in &clusters {
            for &i in cluster {
                prop_assert!(seen.insert(i), "clusters are disjoint");
            }
        }
        prop_assert_eq!(seen.len(), points.len());
    }

    #[test]
    fn extracted_probabilities_never_exceed_the_stack_maximum(
        stacks in prop::collection::vec(grid(10), 1..4),
    ) {
        // Pad every slice to one common shape so the stack is rectangular.
        let h = stacks.iter().map(|s| s.0).max().unwrap();
        let w = stacks.iter().map(|s| s.1).max().unwrap();
        let maps: Vec<ProbabilityMap> = stacks
            .iter()
            .enumerate()
            .map(|(z, (sh, sw, cells))| {
                let mut values = Array2::zeros((h, w));
                for r in 0..*sh {
                    for c in 0..*sw {
                        values[(r, c)] = cells[r * sw + c] as f32 / 1000.0;
                    }
                }
                ProbabilityMap { values, slice_index: z, series_id: "p".into() }
            })
            .collect();
        let peak = maps
            .iter()
            .flat_map(|m| m.values.iter())
            .fold(0.0f32, |a, &b| a.max(b));
        let geom = Geometry { spacing_mm: (1.0, 1.0, 1.0), origin_mm: (0.0, 0.0, 0.0) };
        let cands = extract(&maps, 0.45, 2.0, 1, geom).expect("valid maps");
        for c in &cands {
            prop_assert!(c.probability > 0.45, "every candidate clears the threshold");
            prop_assert!(c.probability <= f64::from(peak));
        }
        for pair in cands.windows(2) {
            prop_assert!(pair[0].probability >= pair[1].probability, "sorted descending");
        }
    }
}

fn scene_strategy() -> impl Strategy<Value = (Vec<NoduleCandidate>, Vec<Annotation>)> {
    let anns = prop::collection::vec(
        (prop::array::uniform3(-25.0..25.0f64), 3.0..14.0f64),
        1..5,
    );
    (anns, prop::collection::vec((prop::array::uniform3(-25.0..25.0f64), 1..=20u32), 0..12))
        .prop_map(|(anns, cands)| {
            let annotations: Vec<Annotation> = anns
                .into_iter()
                .map(|([x, y, z], d)| Annotation {
                    series_id: "p".into(),
                    center_mm: (x, y, z),
                    diameter_mm: d,
                })
                .collect();
            let candidates: Vec<NoduleCandidate> = cands
                .into_iter()
                .map(|([x, y, z], p)| NoduleCandidate {
                    series_id: "p".into(),
                    center_mm: (x, y, z),
                    radius_mm: 2.0,
                    probability: f64::from(p) / 20.0,
                })
                .collect();
            (candidates, annotations)
        })
}

proptest! {
    #[test]
    fn matching_claims_each_annotation_at_most_once(
        (cands, anns) in scene_strategy(),
        dup_fp in any::<bool>(),
    ) {
        let m = match_series(&cands, &anns, dup_fp);
        prop_assert_eq!(m.labels.len(), cands.len());
        prop_assert_eq!(m.detected.len(), anns.len());

        let mut claimed = HashSet::new();
        for label in &m.labels {
            match label {
                MatchLabel::TruePositive { annotation } => {
                    prop_assert!(*annotation < anns.len());
                    prop_assert!(claimed.insert(*annotation), "one hit per annotation");
                }
                MatchLabel::Ignored => prop_assert!(!dup_fp, "duplicates only when allowed"),
                MatchLabel::FalsePositive => {}
            }
        }
        for (j, &d) in m.detected.iter().enumerate() {
            prop_assert_eq!(d, claimed.contains(&j), "detected flags mirror the claims");
        }
    }

    #[test]
    fn froc_curves_step_monotonically(
        (cands, anns) in scene_strategy(),
        permute in any::<u64>(),
    ) {
        let m = match_series(&cands, &anns, false);
        let scored = scored_labels(&cands, &m);
        let report = froc(&scored, anns.len(), 1).expect("valid inputs");

        for pair in report.curve.windows(2) {
            prop_assert!(pair[0].0 <= pair[1].0, "fp per scan only grows down the sweep");
            prop_assert!(pair[0].1 <= pair[1].1, "sensitivity only grows down the sweep");
        }
        let mean: f64 =
            report.sensitivities.values().sum::<f64>() / report.sensitivities.len() as f64;
        prop_assert_eq!(report.cpm, mean, "cpm is the mean of the seven rates");
        for (_, s) in &report.sensitivities {
            prop_assert!((0.0..=1.0).contains(s));
        }

        // The sweep sorts internally, so input order cannot matter.
        let mut shuffled = scored.clone();
        let n = shuffled.len();
        if n > 1 {
            let mut state = permute;
            for i in (1..n).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (state >> 33) as usize % (i + 1));
            }
        }
        let again = froc(&shuffled, anns.len(), 1).expect("valid inputs");
        prop_assert_eq!(again, report);
    }

    #[test]
    fn kfold_always_partitions_with_balanced_sizes(
        (n, k) in (1..30usize).prop_flat_map(|n| (Just(n), 1..=n)),
        seed in any::<u64>(),
    ) {
        let ids: Vec<String> = (0..n).map(|i| format!("s{i:03}")).collect();
        let folds = kfold_split(&ids, k, seed).expect("k <= n");
        prop_assert_eq!(folds.len(), k);

        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        prop_assert!(hi - lo <= 1, "fold sizes differ by at most one");

        let mut all: Vec<&String> = folds.iter().flatten().collect();
        prop_assert_eq!(all.len(), n);
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), n, "no id repeats across folds");
    }

    #[test]
    fn logit_gradients_are_sigmoid_residuals(
        pairs in prop::collection::vec((-8.0..8.0f64, any::<bool>()), 1..24),
    ) {
        let n = pairs.len();
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| if p.1 { 1.0 } else { 0.0 }).collect();
        let mut g = Graph::new();
        let xt = g.leaf(Arr::from_shape_vec(IxDyn(&[n]), xs.clone()).expect("sized"));
        let yt = g.constant(Arr::from_shape_vec(IxDyn(&[n]), ys.clone()).expect("sized"));
        let loss = g.bce_with_logits(xt, yt);
        g.backward(loss);
        let grad = g.grad(xt).expect("leaf gradient");
        for i in 0..n {
            let want = (1.0 / (1.0 + (-xs[i]).exp()) - ys[i]) / n as f64;
            prop_assert!((grad[[i]] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn growing_an_annotation_only_adds_voxels(
        center in prop::array::uniform3(3.0..13.0f64),
        d in 0.5..6.0f64,
        growth in 0.0..6.0f64,
    ) {
        let shape = (6, 16, 16);
        let spacing = (1.0, 1.0, 1.0);
        let origin = (0.0, 0.0, 0.0);
        let ann = |diameter: f64| Annotation {
            series_id: "p".into(),
            center_mm: (center[0], center[1], center[2].min(5.0)),
            diameter_mm: diameter,
        };
        let small = rasterize_annotations(shape, spacing, origin, &[ann(d)]);
        let large = rasterize_annotations(shape, spacing, origin, &[ann(d + growth)]);
        for (s, l) in small.iter().zip(large.iter()) {
            prop_assert!(l >= s);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn volumes_round_trip_bit_exactly(
        (nz, ny, nx) in (1..4usize, 1..8usize, 1..8usize),
        fill in prop::collection::vec(-1500.0..2000.0f32, 256),
        spacing in prop::array::uniform3(0.05..4.0f64),
        origin in prop::array::uniform3(-200.0..200.0f64),
        id in "[a-z][a-z0-9]{0,8}",
    ) {
        let voxels = Array3::from_shape_fn((nz, ny, nx), |(z, y, x)| {
            fill[(z * ny * nx + y * nx + x) % fill.len()]
        });
        let vol = CTVolume {
            series_id: id,
            voxels,
            spacing_mm: (spacing[0], spacing[1], spacing[2]),
            origin_mm: (origin[0], origin[1], origin[2]),
        };
        let dir = tempdir().expect("tempdir");
        let path = dir.path().join("vol.json");
        write_volume(&vol, &path).expect("writable");
        let back = read_volume(&path).expect("readable");
        prop_assert_eq!(back.series_id, vol.series_id);
        prop_assert_eq!(back.spacing_mm, vol.spacing_mm);
        prop_assert_eq!(back.origin_mm, vol.origin_mm);
        prop_assert_eq!(back.voxels, vol.voxels);
    }
}
