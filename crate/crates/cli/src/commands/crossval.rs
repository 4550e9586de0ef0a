use std::path::PathBuf;

use serde::Serialize;
use swintempo_core::candidates::{extract, sort_candidates, write_candidates, Geometry, NoduleCandidate};
use swintempo_core::error::Result;
use swintempo_core::froc::{kfold_split, write_plot, write_report};
use swintempo_core::model::network::process_volume;
use swintempo_core::model::plans::PlanCache;
use swintempo_core::training::TrainSample;

use crate::commands::evaluate::score;
use crate::commands::train::{fit_into, load_dataset, FitParams, TrainFlags};
use crate::commands::{ensure_dir, say, ExtractParams};
use crate::config::{echo_effective, pick, require, CrossvalSection};
use crate::opts::CrossvalOpts;

#[derive(Serialize)]
struct Effective {
    data: PathBuf,
    out: PathBuf,
    folds: usize,
    #[serde(flatten)]
    fit: FitParams,
    threshold: f64,
    eps: f64,
    min_pts: usize,
    duplicates_as_fp: bool,
}

pub fn run(opts: CrossvalOpts, file: CrossvalSection, seed: Option<u64>) -> Result<()> {
    let data = require(opts.data, file.data, "--data")?;
    let out = require(opts.out, file.out, "--out")?;
    let folds = pick(opts.folds, file.folds, 2);
    let fit = FitParams::resolve(
        TrainFlags {
            variant: opts.variant,
            scale: opts.scale,
            input_size: opts.input_size,
            epochs: opts.epochs,
            learning_rate: opts.learning_rate,
            weight_decay: opts.weight_decay,
            slices_per_step: opts.slices_per_step,
            no_augment: opts.no_augment,
        },
        TrainFlags {
            variant: file.variant,
            scale: file.scale,
            input_size: file.input_size,
            epochs: file.epochs,
            learning_rate: file.learning_rate,
            weight_decay: file.weight_decay,
            slices_per_step: file.slices_per_step,
            no_augment: file.no_augment,
        },
    )?;
    let params = ExtractParams {
        threshold: pick(opts.threshold, file.threshold, 0.5),
        eps: pick(opts.eps, file.eps, 2.5),
        min_pts: pick(opts.min_pts, file.min_pts, 1),
    };
    params.validate()?;
    let duplicates_as_fp = pick(opts.duplicates_as_fp, file.duplicates_as_fp, true);
    let seed = seed.unwrap_or(0);

    let model = fit.model()?;
    let (samples, annotations) = load_dataset(&data, &model)?;

    let mut ids: Vec<String> = samples.iter().map(|s| s.volume.series_id.clone()).collect();
    ids.sort();
    let fold_ids = kfold_split(&ids, folds, seed)?;

    ensure_dir(&out)?;
    let mut pooled: Vec<NoduleCandidate> = Vec::new();
    for (f, test_ids) in fold_ids.iter().enumerate() {
        let fold_dir = out.join(format!("fold{f}"));
        ensure_dir(&fold_dir)?;
        let train_set: Vec<TrainSample> = samples
            .iter()
            .filter(|s| !test_ids.contains(&s.volume.series_id))
            .cloned()
            .collect();
        // Each fold trains from its own seed so folds are independent draws.
        let cfg = fit.train_config(seed.wrapping_add(f as u64 + 1))?;
        let outcome = fit_into(&train_set, &model, &cfg, &fold_dir)?;

        let mut fold_cands: Vec<NoduleCandidate> = Vec::new();
        let mut plans = PlanCache::new();
        for sample in samples.iter().filter(|s| test_ids.contains(&s.volume.series_id)) {
            let maps =
                process_volume(&sample.volume, &model, &outcome.checkpoint.params, &mut plans)?;
            let geom = Geometry {
                spacing_mm: sample.volume.spacing_mm,
                origin_mm: sample.volume.origin_mm,
            };
            fold_cands.extend(extract(&maps, params.threshold, params.eps, params.min_pts, geom)?);
        }
        sort_candidates(&mut fold_cands);
        write_candidates(&fold_dir.join("candidates.csv"), &fold_cands)?;
        say!(
            "fold {f}: trained on {} volumes, {} candidates on {} held out",
            train_set.len(),
            fold_cands.len(),
            test_ids.len()
        );
        pooled.extend(fold_cands);
    }

    sort_candidates(&mut pooled);
    write_candidates(&out.join("candidates.csv"), &pooled)?;
    let report = score(&pooled, &annotations, ids.len(), duplicates_as_fp)?;
    write_report(&out.join("froc.json"), &report)?;
    write_plot(&out.join("froc.svg"), &report)?;
    echo_effective(
        &out,
        Some(seed),
        "crossval",
        &Effective {
            data,
            out: out.clone(),
            folds,
            fit,
            threshold: params.threshold,
            eps: params.eps,
            min_pts: params.min_pts,
            duplicates_as_fp,
        },
    )?;

    say!("pooled cpm {:.4} over {} folds", report.cpm, folds);
    Ok(())
}
