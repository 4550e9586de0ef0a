use ndarray::{Array2, Array3};
use rand::Rng;

use swintempo_core::error::CoreError;
use swintempo_core::phantom::{generate_phantom, PhantomConfig, NODULE_HU};
use swintempo_core::preprocess::{
    apply_lung_mask, clip_hu, preprocess, resize_slice, resize_volume, standardize, HU_MIN,
};
use swintempo_core::rng;
use swintempo_core::volume::{
    rasterize_annotations, read_annotations, read_volume, write_annotations, write_volume,
    Annotation, CTVolume, LungMask,
};

fn test_volume(shape: (usize, usize, usize), seed: u64) -> CTVolume {
    let mut r = rng::stream(seed, "test.volume");
    let voxels = Array3::from_shape_simple_fn(shape, || r.gen_range(-1000.0..400.0f32));
    CTVolume {
        series_id: format!("t{seed}"),
        voxels,
        spacing_mm: (2.0, 0.7, 0.7),
        origin_mm: (-10.0, 5.5, -3.25),
    }
}

#[test]
fn volume_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let vol = test_volume((5, 9, 7), 1);
    let path = dir.path().join("v");
    write_volume(&vol, &path).unwrap();
    let back = read_volume(&path).unwrap();
    assert_eq!(back.series_id, vol.series_id);
    assert_eq!(back.spacing_mm, vol.spacing_mm);
    assert_eq!(back.origin_mm, vol.origin_mm);
    assert_eq!(back.voxels, vol.voxels);
}

#[test]
fn volume_payload_is_four_bytes_per_voxel() {
    let dir = tempfile::tempdir().unwrap();
    let vol = test_volume((16, 64, 64), 2);
    let path = dir.path().join("v");
    write_volume(&vol, &path).unwrap();
    let raw = std::fs::metadata(path.with_extension("raw")).unwrap().len();
    assert_eq!(raw, 16 * 64 * 64 * 4);
}

#[test]
fn truncated_payload_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let vol = test_volume((4, 8, 8), 3);
    let path = dir.path().join("v");
    write_volume(&vol, &path).unwrap();
    let raw = path.with_extension("raw");
    let bytes = std::fs::read(&raw).unwrap();
    std::fs::write(&raw, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(read_volume(&path), Err(CoreError::Format(_))));
}

#[test]
fn non_finite_voxels_are_rejected_before_write() {
    let dir = tempfile::tempdir().unwrap();
    let mut vol = test_volume((4, 8, 8), 4);
    vol.voxels[[0, 0, 0]] = f32::NAN;
    let err = write_volume(&vol, &dir.path().join("v"));
    assert!(matches!(err, Err(CoreError::Validation(_))));
    assert!(!dir.path().join("v.raw").exists());
}

#[test]
fn annotations_round_trip_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.csv");

    std::fs::write(&path, "series_id,coord_x,coord_y,coord_z,diameter_mm\ns1,10.0,20.0,5.0,6.0\n")
        .unwrap();
    let anns = read_annotations(&path).unwrap();
    assert_eq!(anns.len(), 1);
    assert_eq!(anns[0].series_id, "s1");
    assert_eq!(anns[0].center_mm, (10.0, 20.0, 5.0));
    assert_eq!(anns[0].diameter_mm, 6.0);

    std::fs::write(&path, "series_id,coord_x,coord_y,coord_z,diameter_mm\n").unwrap();
    assert!(read_annotations(&path).unwrap().is_empty());

    std::fs::write(&path, "series_id,coord_x,coord_y,coord_z,diameter_mm\ns1,1,2,3,0.0\n").unwrap();
    assert!(matches!(read_annotations(&path), Err(CoreError::Validation(_))));

    std::fs::write(&path, "series_id,coord_x,coord_y,coord_z,diameter_mm\ns1,1,2,nope,1\n")
        .unwrap();
    match read_annotations(&path) {
        Err(CoreError::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }

    let anns = vec![Annotation {
        series_id: "s2".into(),
        center_mm: (1.5, -2.0, 30.0),
        diameter_mm: 4.5,
    }];
    write_annotations(&anns, &path).unwrap();
    assert_eq!(read_annotations(&path).unwrap(), anns);
}

/// Voxel-center distance check over the whole grid, written independently
/// of the rasterizer.
fn brute_force_sphere_mask(
    shape: (usize, usize, usize),
    spacing: (f64, f64, f64),
    origin: (f64, f64, f64),
    anns: &[Annotation],
) -> Array3<u8> {
    let mut out = Array3::zeros(shape);
    for z in 0..shape.0 {
        for y in 0..shape.1 {
            for x in 0..shape.2 {
                let wz = origin.0 + z as f64 * spacing.0;
                let wy = origin.1 + y as f64 * spacing.1;
                let wx = origin.2 + x as f64 * spacing.2;
                let hit = anns.iter().any(|a| {
                    let d2 = (wx - a.center_mm.0).powi(2)
                        + (wy - a.center_mm.1).powi(2)
                        + (wz - a.center_mm.2).powi(2);
                    d2 <= (a.diameter_mm / 2.0).powi(2)
                });
                if hit {
                    out[[z, y, x]] = 1;
                }
            }
        }
    }
    out
}

#[test]
fn rasterize_no_annotations_is_all_zero() {
    let mask = rasterize_annotations((4, 5, 6), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), &[]);
    assert!(mask.iter().all(|&v| v == 0));
}

#[test]
fn rasterized_sphere_volume_matches_the_continuous_ball() {
    let ann = Annotation {
        series_id: "s".into(),
        center_mm: (8.0, 8.5, 7.5),
        diameter_mm: 10.0,
    };
    let shape = (16, 17, 18);
    let mask = rasterize_annotations(shape, (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), &[ann.clone()]);
    let count = mask.iter().filter(|&&v| v == 1).count() as f64;
    let ideal = 4.0 / 3.0 * std::f64::consts::PI * 125.0;
    assert!((count - ideal).abs() / ideal < 0.15, "count {count} vs ideal {ideal}");

    let oracle = brute_force_sphere_mask(shape, (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), &[ann]);
    assert_eq!(mask, oracle);
}

#[test]
fn disjoint_spheres_rasterize_to_the_sum_of_counts() {
    let a = Annotation { series_id: "s".into(), center_mm: (5.0, 6.0, 5.0), diameter_mm: 6.0 };
    let b = Annotation { series_id: "s".into(), center_mm: (20.0, 18.0, 9.0), diameter_mm: 4.0 };
    let shape = (14, 26, 28);
    let sp = (1.0, 1.0, 1.0);
    let or = (0.0, 0.0, 0.0);
    let ca = rasterize_annotations(shape, sp, or, std::slice::from_ref(&a))
        .iter()
        .filter(|&&v| v == 1)
        .count();
    let cb = rasterize_annotations(shape, sp, or, std::slice::from_ref(&b))
        .iter()
        .filter(|&&v| v == 1)
        .count();
    let both = rasterize_annotations(shape, sp, or, &[a.clone(), b.clone()]);
    assert_eq!(both.iter().filter(|&&v| v == 1).count(), ca + cb);
    assert_eq!(both, brute_force_sphere_mask(shape, sp, or, &[a, b]));
}

#[test]
fn rasterization_is_monotone_in_annotations() {
    let a = Annotation { series_id: "s".into(), center_mm: (6.0, 6.0, 6.0), diameter_mm: 7.0 };
    let b = Annotation { series_id: "s".into(), center_mm: (8.0, 7.0, 5.0), diameter_mm: 5.0 };
    let one = rasterize_annotations((12, 12, 12), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), &[a.clone()]);
    let two = rasterize_annotations((12, 12, 12), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), &[a, b]);
    for (x, y) in one.iter().zip(two.iter()) {
        assert!(y >= x);
    }
}

#[test]
fn phantom_generation_is_deterministic() {
    let cfg = PhantomConfig { n_volumes: 2, seed: 7, ..PhantomConfig::default() };
    let a = generate_phantom(&cfg).unwrap();
    let b = generate_phantom(&cfg).unwrap();
    assert_eq!(a.len(), 2);
    for (ca, cb) in a.iter().zip(&b) {
        assert_eq!(ca.volume.voxels, cb.volume.voxels);
        assert_eq!(ca.mask.mask, cb.mask.mask);
        assert_eq!(ca.annotations, cb.annotations);
    }
}

#[test]
fn phantom_without_nodules_is_background_only() {
    let cfg = PhantomConfig {
        n_volumes: 1,
        nodules_per_volume: (0, 0),
        seed: 3,
        ..PhantomConfig::default()
    };
    let cases = generate_phantom(&cfg).unwrap();
    assert!(cases[0].annotations.is_empty());
    assert!(cases[0].volume.voxels.iter().all(|&v| v != NODULE_HU));
}

#[test]
fn phantom_annotations_reproduce_the_bright_voxels() {
    let cfg = PhantomConfig { n_volumes: 3, seed: 11, ..PhantomConfig::default() };
    for case in generate_phantom(&cfg).unwrap() {
        let painted = rasterize_annotations(
            case.volume.shape(),
            case.volume.spacing_mm,
            case.volume.origin_mm,
            &case.annotations,
        );
        let bright: Vec<bool> = case.volume.voxels.iter().map(|&v| v == NODULE_HU).collect();
        let inter = bright
            .iter()
            .zip(painted.iter())
            .filter(|(&b, &p)| b && p == 1)
            .count();
        let union = bright
            .iter()
            .zip(painted.iter())
            .filter(|(&b, &p)| b || p == 1)
            .count();
        assert!(!case.annotations.is_empty());
        assert!(union > 0);
        assert!(inter as f64 / union as f64 >= 0.95);
    }
}

#[test]
fn clip_matches_the_stated_window() {
    let mut vol = test_volume((2, 4, 4), 5);
    vol.voxels[[0, 0, 0]] = -2000.0;
    vol.voxels[[0, 0, 1]] = 3000.0;
    vol.voxels[[0, 0, 2]] = 0.0;
    let clipped = clip_hu(vol);
    assert_eq!(clipped.voxels[[0, 0, 0]], -1200.0);
    assert_eq!(clipped.voxels[[0, 0, 1]], 600.0);
    assert_eq!(clipped.voxels[[0, 0, 2]], 0.0);
    assert!(clipped.voxels.iter().all(|&v| (-1200.0..=600.0).contains(&v)));
    let again = clip_hu(clipped.clone());
    assert_eq!(again.voxels, clipped.voxels);
}

#[test]
fn lung_mask_fills_with_the_clip_floor() {
    let vol = test_volume((2, 4, 4), 6);
    let all_ones = LungMask::new(Array3::from_elem((2, 4, 4), 1)).unwrap();
    assert_eq!(apply_lung_mask(vol.clone(), &all_ones).unwrap().voxels, vol.voxels);

    let all_zeros = LungMask::new(Array3::zeros((2, 4, 4))).unwrap();
    assert!(apply_lung_mask(vol.clone(), &all_zeros)
        .unwrap()
        .voxels
        .iter()
        .all(|&v| v == HU_MIN));

    let mut half = Array3::zeros((2, 4, 4));
    half.slice_mut(ndarray::s![0, .., ..]).fill(1);
    let masked = apply_lung_mask(vol.clone(), &LungMask::new(half).unwrap()).unwrap();
    for y in 0..4 {
        for x in 0..4 {
            assert_eq!(masked.voxels[[0, y, x]], vol.voxels[[0, y, x]]);
            assert_eq!(masked.voxels[[1, y, x]], HU_MIN);
        }
    }

    let small = LungMask::new(Array3::zeros((1, 4, 4))).unwrap();
    assert!(matches!(apply_lung_mask(vol, &small), Err(CoreError::Validation(_))));
}

#[test]
fn standardize_hand_example_and_guards() {
    let mut vol = test_volume((1, 2, 2), 7);
    vol.voxels = Array3::from_shape_vec((1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let out = standardize(vol);
    let want = [-1.3416, -0.4472, 0.4472, 1.3416];
    for (&got, &w) in out.voxels.iter().zip(&want) {
        assert!((got as f64 - w).abs() < 1e-4, "{got} vs {w}");
    }

    let mut constant = test_volume((2, 3, 3), 8);
    constant.voxels.fill(7.25);
    assert!(standardize(constant).voxels.iter().all(|&v| v == 0.0));

    let out = standardize(test_volume((3, 8, 8), 9));
    let n = out.voxels.len() as f64;
    let mean = out.voxels.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = out.voxels.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 1e-5);
    assert!((var - 1.0).abs() < 1e-4);
}

#[test]
fn resize_identity_constants_and_monotonicity() {
    let slice = Array2::from_shape_fn((64, 64), |(r, c)| (r * 64 + c) as f32);
    assert_eq!(resize_slice(slice.view(), 64), slice);

    let constant = Array2::from_elem((5, 9), 3.5f32);
    assert!(resize_slice(constant.view(), 8).iter().all(|&v| v == 3.5));

    let tiny = Array2::from_shape_vec((2, 2), vec![0.0, 1.0, 0.0, 1.0]).unwrap();
    let up = resize_slice(tiny.view(), 4);
    for r in 0..4 {
        for c in 1..4 {
            assert!(up[[r, c]] >= up[[r, c - 1]]);
        }
    }

    let wild = Array2::from_shape_fn((7, 5), |(r, c)| ((r * 31 + c * 17) % 13) as f32 - 6.0);
    let (lo, hi) = wild.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| {
        (l.min(v), h.max(v))
    });
    assert!(resize_slice(wild.view(), 11).iter().all(|&v| v >= lo && v <= hi));
}

#[test]
fn preprocess_composes_the_stages_in_order() {
    let cfg = PhantomConfig { n_volumes: 1, seed: 13, ..PhantomConfig::default() };
    let case = generate_phantom(&cfg).unwrap().remove(0);

    let got = preprocess(case.volume.clone(), Some(&case.mask), 32).unwrap();
    let manual = resize_volume(
        &standardize(apply_lung_mask(clip_hu(case.volume), &case.mask).unwrap()),
        32,
    );
    assert_eq!(got.voxels, manual.voxels);
    assert_eq!(got.spacing_mm, manual.spacing_mm);
    assert_eq!(got.shape(), (16, 32, 32));
}
