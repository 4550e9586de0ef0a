//! End-to-end checks of the `swintempo` binary: determinism, config
//! resolution, exit codes, and the documented artifact layout.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn swintempo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swintempo"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = swintempo(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Every regular file in `dir`, relative name to content bytes.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).expect("readable dir") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).expect("under root");
                files.insert(rel.to_string_lossy().into_owned(), fs::read(&path).expect("readable"));
            }
        }
    }
    files
}

fn synth_small(dir: &Path, out: &str, seed: &str) {
    ok(
        dir,
        &[
            "synth", "--out", out, "--n-volumes", "2", "--slices", "12", "--seed", seed,
            "--radius-min", "3", "--radius-max", "5",
        ],
    );
}

#[test]
fn repeated_synth_runs_are_bit_identical() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    // Identical argv (same relative --out) from two working directories.
    synth_small(a.path(), "d", "7");
    synth_small(b.path(), "d", "7");
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert!(sa.len() >= 7, "volumes, masks, annotations, and config expected");
    assert_eq!(sa, sb);
}

#[test]
fn the_seed_changes_the_data() {
    let t = TempDir::new().unwrap();
    synth_small(t.path(), "a", "7");
    synth_small(t.path(), "b", "8");
    let raw_of = |o: &str, n: &str| fs::read(t.path().join(o).join(n)).unwrap();
    assert_ne!(raw_of("a", "phantom-7-000.raw"), raw_of("b", "phantom-8-000.raw"));
}

#[test]
fn exit_codes_follow_the_contract() {
    let t = TempDir::new().unwrap();

    let unknown = swintempo(t.path(), &["synth", "--bogus"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));

    let missing = swintempo(
        t.path(),
        &["evaluate", "--candidates", "nope.csv", "--annotations", "nope.csv", "--n-scans", "1", "--out", "e"],
    );
    assert_eq!(missing.status.code(), Some(2), "missing input file is an I/O error");

    fs::write(t.path().join("c.csv"), "series_id,coord_x,coord_y,coord_z,radius_mm,probability\n").unwrap();
    fs::write(t.path().join("a.csv"), "series_id,coord_x,coord_y,coord_z,diameter_mm\n").unwrap();
    let invalid = swintempo(
        t.path(),
        &["evaluate", "--candidates", "c.csv", "--annotations", "a.csv", "--n-scans", "0", "--out", "e"],
    );
    assert_eq!(invalid.status.code(), Some(1), "zero scans is a validation error");

    let help = swintempo(t.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn flags_override_the_config_file_and_the_echo_reruns_identically() {
    let t = TempDir::new().unwrap();
    fs::write(
        t.path().join("run.toml"),
        "seed = 9\n[synth]\nout = \"ignored\"\nn_volumes = 3\nslices = 12\n",
    )
    .unwrap();
    // Flags win over the file: out and n_volumes come from argv, seed and
    // slices from the file.
    ok(t.path(), &["synth", "--config", "run.toml", "--out", "d", "--n-volumes", "1"]);
    let d = snapshot(&t.path().join("d"));
    assert!(d.contains_key("phantom-9-000.json"), "file seed applied: {:?}", d.keys());
    assert!(!d.contains_key("phantom-9-001.json"), "flag n_volumes applied");

    let echo = t.path().join("d/effective-config.toml");
    let text = fs::read_to_string(&echo).unwrap();
    assert!(text.contains("seed = 9"));
    assert!(text.contains("n_volumes = 1"));

    // The echoed config alone reproduces the run (into a fresh directory).
    ok(t.path(), &["synth", "--config", "d/effective-config.toml", "--out", "d2"]);
    let d2 = snapshot(&t.path().join("d2"));
    assert_eq!(d.get("phantom-9-000.raw"), d2.get("phantom-9-000.raw"));
    assert_eq!(d.get("annotations.csv"), d2.get("annotations.csv"));
}

#[test]
fn preprocess_requires_masks_unless_disabled() {
    let t = TempDir::new().unwrap();
    synth_small(t.path(), "raw", "7");
    fs::remove_file(t.path().join("raw/phantom-7-001_mask.json")).unwrap();

    let refused = swintempo(t.path(), &["preprocess", "--input", "raw", "--out", "p"]);
    assert_eq!(refused.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("phantom-7-001_mask"));

    ok(t.path(), &["preprocess", "--input", "raw", "--out", "p", "--no-mask"]);
    assert!(t.path().join("p/phantom-7-001.raw").is_file());
    assert!(t.path().join("p/annotations.csv").is_file(), "annotations ride along");
}

#[test]
fn the_preprocess_cache_is_exact() {
    let t = TempDir::new().unwrap();
    synth_small(t.path(), "raw", "7");
    let cache = t.path().join("cache");

    let run = |out: &str, cached: bool| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_swintempo"));
        cmd.current_dir(t.path()).args(["preprocess", "--input", "raw", "--out", out]);
        if cached {
            cmd.env("SWINTEMPO_CACHE", &cache);
        }
        let out = cmd.output().expect("binary runs");
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run("plain", false);
    run("first", true);
    assert!(cache.read_dir().unwrap().next().is_some(), "cache was populated");
    run("second", true);

    let volume_files = |dir: &str| {
        let mut s = snapshot(&t.path().join(dir));
        s.remove("effective-config.toml");
        s
    };
    // Cached and uncached outputs are byte-identical.
    assert_eq!(volume_files("plain"), volume_files("first"));
    assert_eq!(volume_files("first"), volume_files("second"));
}

#[test]
fn infer_output_is_sorted_and_job_count_invariant() {
    let t = TempDir::new().unwrap();
    synth_small(t.path(), "raw", "7");
    ok(t.path(), &["preprocess", "--input", "raw", "--out", "p"]);
    ok(
        t.path(),
        &[
            "train", "--data", "p", "--out", "m", "--variant", "baseline_unet", "--epochs", "2",
            "--no-augment", "--seed", "7",
        ],
    );
    assert!(t.path().join("m/model.ckpt").is_file());
    let log = fs::read_to_string(t.path().join("m/train_log.csv")).unwrap();
    assert!(log.starts_with("step,epoch,loss"));

    for jobs in ["1", "2"] {
        ok(
            t.path(),
            &[
                "infer", "--checkpoint", "m/model.ckpt", "--volume", "p", "--out",
                &format!("inf{jobs}"), "--jobs", jobs,
            ],
        );
    }
    let uno = fs::read(t.path().join("inf1/candidates.csv")).unwrap();
    let dos = fs::read(t.path().join("inf2/candidates.csv")).unwrap();
    assert_eq!(uno, dos, "worker count must not change the output");

    let text = String::from_utf8(uno).unwrap();
    assert!(text.starts_with("series_id,coord_x,coord_y,coord_z,radius_mm,probability"));
    let probs: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(probs.windows(2).all(|w| w[0] >= w[1]), "descending probability");
}

#[test]
fn evaluate_writes_the_report_and_plot() {
    let t = TempDir::new().unwrap();
    fs::write(
        t.path().join("c.csv"),
        "series_id,coord_x,coord_y,coord_z,radius_mm,probability\n\
         s0,10.0,10.0,10.0,4.0,0.9\n\
         s0,40.0,40.0,40.0,4.0,0.8\n",
    )
    .unwrap();
    fs::write(
        t.path().join("a.csv"),
        "series_id,coord_x,coord_y,coord_z,diameter_mm\ns0,10.0,10.0,11.0,8.0\n",
    )
    .unwrap();
    let out = ok(
        t.path(),
        &["evaluate", "--candidates", "c.csv", "--annotations", "a.csv", "--n-scans", "4", "--out", "e"],
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("cpm 1.0000"));

    let json = fs::read_to_string(t.path().join("e/froc.json")).unwrap();
    assert!(json.contains("\"cpm\": 1.0"));
    let svg = fs::read_to_string(t.path().join("e/froc.svg")).unwrap();
    assert!(svg.starts_with("<svg ") && svg.trim_end().ends_with("</svg>"));
    assert!(t.path().join("e/effective-config.toml").is_file());
}

#[test]
fn crossval_covers_every_series_exactly_once() {
    let t = TempDir::new().unwrap();
    ok(
        t.path(),
        &[
            "synth", "--out", "raw", "--n-volumes", "3", "--slices", "12", "--seed", "7",
            "--radius-min", "3", "--radius-max", "5",
        ],
    );
    ok(t.path(), &["preprocess", "--input", "raw", "--out", "p"]);
    ok(
        t.path(),
        &[
            "crossval", "--data", "p", "--out", "cv", "--folds", "3", "--variant",
            "baseline_unet", "--epochs", "2", "--no-augment", "--seed", "7",
        ],
    );
    for f in 0..3 {
        let fold = t.path().join(format!("cv/fold{f}"));
        assert!(fold.join("model.ckpt").is_file());
        assert!(fold.join("candidates.csv").is_file());
        assert!(fold.join("train_log.csv").is_file());
    }
    assert!(t.path().join("cv/froc.json").is_file());
    assert!(t.path().join("cv/froc.svg").is_file());
    assert!(t.path().join("cv/candidates.csv").is_file());

    // The pooled candidate list is exactly the folds' lists reordered.
    let series_of = |p: &Path| -> Vec<String> {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap().to_string())
            .collect()
    };
    let mut pooled = series_of(&t.path().join("cv/candidates.csv"));
    let mut per_fold: Vec<String> =
        (0..3).flat_map(|f| series_of(&t.path().join(format!("cv/fold{f}/candidates.csv")))).collect();
    pooled.sort();
    per_fold.sort();
    assert_eq!(pooled, per_fold);
}

#[test]
fn train_refuses_unpreprocessed_volume_sizes() {
    let t = TempDir::new().unwrap();
    // 48x48 slices cannot feed the 64x64 tiny network.
    ok(
        t.path(),
        &[
            "synth", "--out", "raw", "--n-volumes", "1", "--slices", "12", "--height", "48",
            "--width", "48", "--radius-min", "3", "--radius-max", "5", "--seed", "7",
        ],
    );
    let refused = swintempo(
        t.path(),
        &["train", "--data", "raw", "--out", "m", "--variant", "baseline_unet", "--epochs", "1"],
    );
    assert_eq!(refused.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("preprocess --target-size"));
}
