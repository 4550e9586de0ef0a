use std::path::{Path, PathBuf};

use serde::Serialize;
use swintempo_core::checkpoint::save_checkpoint;
use swintempo_core::error::{CoreError, Result};
use swintempo_core::model::ModelConfig;
use swintempo_core::training::augment::AugmentConfig;
use swintempo_core::training::{train, write_train_log, TrainConfig, TrainOutcome, TrainSample};
use swintempo_core::volume::{read_annotations, Annotation, CTVolume};

use crate::commands::{ensure_dir, require_file, resolve_model, say};
use crate::config::{echo_effective, pick, require, TrainSection};
use crate::data::{annotations_path, build_samples, volume_bases};
use crate::opts::TrainOpts;

/// The resolved training knobs, also reused verbatim by crossval.
#[derive(Serialize)]
pub struct FitParams {
    pub variant: String,
    pub scale: String,
    pub input_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub slices_per_step: usize,
    pub no_augment: bool,
}

impl FitParams {
    pub fn resolve(opts: TrainFlags, file: TrainFlags) -> Result<FitParams> {
        let variant = pick(opts.variant, file.variant, "swin_tempo".into());
        let scale = pick(opts.scale, file.scale, "tiny".into());
        let input_size = opts.input_size.or(file.input_size);
        // Resolve the preset up front so the echoed config carries the
        // concrete input size rather than a preset-dependent blank.
        let model = resolve_model(&variant, &scale, input_size)?;
        Ok(FitParams {
            variant,
            scale,
            input_size: model.input_size,
            epochs: pick(opts.epochs, file.epochs, 8),
            learning_rate: pick(opts.learning_rate, file.learning_rate, 1e-4),
            weight_decay: pick(opts.weight_decay, file.weight_decay, 1e-4),
            slices_per_step: pick(opts.slices_per_step, file.slices_per_step, 4),
            no_augment: pick(opts.no_augment, file.no_augment, false),
        })
    }

    pub fn model(&self) -> Result<ModelConfig> {
        resolve_model(&self.variant, &self.scale, Some(self.input_size))
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::new(self.variant.parse()?, self.epochs, seed);
        cfg.learning_rate = self.learning_rate;
        cfg.weight_decay = self.weight_decay;
        cfg.slices_per_step = self.slices_per_step;
        if self.no_augment {
            cfg.augment = AugmentConfig::disabled();
        }
        Ok(cfg)
    }
}

/// The common subset of train-shaped flag structs.
pub struct TrainFlags {
    pub variant: Option<String>,
    pub scale: Option<String>,
    pub input_size: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub slices_per_step: Option<usize>,
    pub no_augment: Option<bool>,
}

#[derive(Serialize)]
struct Effective {
    data: PathBuf,
    out: PathBuf,
    #[serde(flatten)]
    fit: FitParams,
}

pub fn run(opts: TrainOpts, file: TrainSection, seed: Option<u64>) -> Result<()> {
    let data = require(opts.data, file.data, "--data")?;
    let out = require(opts.out, file.out, "--out")?;
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
    let seed = seed.unwrap_or(0);

    let model = fit.model()?;
    let cfg = fit.train_config(seed)?;
    let (samples, _) = load_dataset(&data, &model)?;

    ensure_dir(&out)?;
    let outcome = fit_into(&samples, &model, &cfg, &out)?;
    echo_effective(&out, Some(seed), "train", &Effective { data, out: out.clone(), fit })?;

    say!(
        "trained {} for {} epochs on {} volumes, best loss {:.6}",
        model.variant,
        cfg.epochs,
        samples.len(),
        outcome.best_loss
    );
    say!("checkpoint: {}", out.join("model.ckpt").display());
    Ok(())
}

/// Load every volume under `dir` plus `annotations.csv` and pair them up,
/// refusing volumes whose slices do not match the network input.
pub fn load_dataset(
    dir: &Path,
    model: &ModelConfig,
) -> Result<(Vec<TrainSample>, Vec<Annotation>)> {
    let bases = volume_bases(dir)?;
    let volumes: Vec<CTVolume> =
        bases.iter().map(|b| read_volume_checked(b, model)).collect::<Result<_>>()?;
    let anns_path = annotations_path(dir);
    require_file(&anns_path)?;
    let anns = read_annotations(&anns_path)?;
    Ok((build_samples(volumes, &anns), anns))
}

fn read_volume_checked(base: &Path, model: &ModelConfig) -> Result<CTVolume> {
    let vol = swintempo_core::volume::read_volume(base)?;
    let (_, ny, nx) = vol.shape();
    if (ny, nx) != (model.input_size, model.input_size) {
        return Err(CoreError::Validation(format!(
            "{path} has {ny}x{nx} slices but the model wants {size}x{size}; \
             run preprocess --target-size {size} first",
            path = base.display(),
            size = model.input_size
        )));
    }
    Ok(vol)
}

/// Train and drop `model.ckpt` plus `train_log.csv` into `dir`.
pub fn fit_into(
    samples: &[TrainSample],
    model: &ModelConfig,
    cfg: &TrainConfig,
    dir: &Path,
) -> Result<TrainOutcome> {
    let outcome = train(samples, model, cfg)?;
    save_checkpoint(&dir.join("model.ckpt"), &outcome.checkpoint)?;
    write_train_log(&dir.join("train_log.csv"), &outcome.log)?;
    Ok(outcome)
}
