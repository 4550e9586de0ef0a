//! Argument surface. Every value-carrying flag is optional here so a TOML
//! config file can supply it; resolution order is flag, then file, then
//! default.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "swintempo", version, about = "Lung nodule detection on CT slice sequences")]
pub struct Cli {
    /// TOML config file mirroring the flags; explicit flags win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Master seed; every random draw in the run derives from it.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate phantom CT volumes with lung masks and annotations.
    Synth(SynthOpts),
    /// Clip, mask, standardize, and resize volumes for the network.
    Preprocess(PreprocessOpts),
    /// Train one model variant on a directory of preprocessed volumes.
    Train(TrainOpts),
    /// Run a checkpoint over volumes and extract nodule candidates.
    Infer(InferOpts),
    /// Score a candidates file against annotations with FROC analysis.
    Evaluate(EvaluateOpts),
    /// K-fold cross-validation: train, infer, and score per fold.
    Crossval(CrossvalOpts),
}

#[derive(Args)]
pub struct SynthOpts {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Number of volumes to generate.
    #[arg(long, value_name = "N")]
    pub n_volumes: Option<usize>,
    /// Slices per volume.
    #[arg(long, value_name = "Z")]
    pub slices: Option<usize>,
    /// In-plane rows per slice.
    #[arg(long, value_name = "Y")]
    pub height: Option<usize>,
    /// In-plane columns per slice.
    #[arg(long, value_name = "X")]
    pub width: Option<usize>,
    /// Minimum nodules per volume.
    #[arg(long, value_name = "N")]
    pub nodules_min: Option<usize>,
    /// Maximum nodules per volume.
    #[arg(long, value_name = "N")]
    pub nodules_max: Option<usize>,
    /// Minimum nodule radius in mm.
    #[arg(long, value_name = "MM")]
    pub radius_min: Option<f64>,
    /// Maximum nodule radius in mm.
    #[arg(long, value_name = "MM")]
    pub radius_max: Option<f64>,
    /// Background noise sigma in HU.
    #[arg(long, value_name = "HU")]
    pub texture: Option<f64>,
}

#[derive(Args)]
pub struct PreprocessOpts {
    /// Directory of raw volumes, masks, and annotations.
    #[arg(long, value_name = "DIR")]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Square side length slices are resized to.
    #[arg(long, value_name = "PX")]
    pub target_size: Option<usize>,
    /// Skip lung-mask isolation even when mask files exist.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub no_mask: Option<bool>,
}

#[derive(Args)]
pub struct TrainOpts {
    /// Directory of preprocessed volumes plus annotations.csv.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Output directory for the checkpoint and training log.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// baseline_unet, swin_enhanced, or swin_tempo.
    #[arg(long, value_name = "VARIANT")]
    pub variant: Option<String>,
    /// Architecture preset: tiny or paper.
    #[arg(long, value_name = "SCALE")]
    pub scale: Option<String>,
    /// Square network input size; overrides the preset.
    #[arg(long, value_name = "PX")]
    pub input_size: Option<usize>,
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    #[arg(long, value_name = "LR")]
    pub learning_rate: Option<f64>,
    #[arg(long, value_name = "WD")]
    pub weight_decay: Option<f64>,
    /// Slices per optimizer step (truncated-backprop window).
    #[arg(long, value_name = "N")]
    pub slices_per_step: Option<usize>,
    /// Disable affine and brightness augmentation.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub no_augment: Option<bool>,
}

#[derive(Args)]
pub struct InferOpts {
    /// Checkpoint produced by train.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Volume file or directory; repeatable.
    #[arg(long = "volume", value_name = "PATH")]
    pub volumes: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Probability threshold for the per-slice masks.
    #[arg(long, value_name = "T")]
    pub threshold: Option<f64>,
    /// DBSCAN linking radius in mm.
    #[arg(long, value_name = "MM")]
    pub eps: Option<f64>,
    /// DBSCAN core-point neighbor count.
    #[arg(long, value_name = "N")]
    pub min_pts: Option<usize>,
    /// Worker threads for per-volume parallelism.
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
    /// Write per-slice detection overlay PNGs.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub overlay: Option<bool>,
}

#[derive(Args)]
pub struct EvaluateOpts {
    /// Candidates CSV from infer.
    #[arg(long, value_name = "PATH")]
    pub candidates: Option<PathBuf>,
    /// Ground-truth annotations CSV.
    #[arg(long, value_name = "PATH")]
    pub annotations: Option<PathBuf>,
    /// Total scans evaluated, including ones without candidates.
    #[arg(long, value_name = "N")]
    pub n_scans: Option<usize>,
    /// Output directory for the report and plot.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Count repeat hits on a claimed nodule as false positives.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub duplicates_as_fp: Option<bool>,
}

#[derive(Args)]
pub struct CrossvalOpts {
    /// Directory of preprocessed volumes plus annotations.csv.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Output directory; one subdirectory per fold.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Number of folds.
    #[arg(long, value_name = "K")]
    pub folds: Option<usize>,
    /// baseline_unet, swin_enhanced, or swin_tempo.
    #[arg(long, value_name = "VARIANT")]
    pub variant: Option<String>,
    /// Architecture preset: tiny or paper.
    #[arg(long, value_name = "SCALE")]
    pub scale: Option<String>,
    /// Square network input size; overrides the preset.
    #[arg(long, value_name = "PX")]
    pub input_size: Option<usize>,
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    #[arg(long, value_name = "LR")]
    pub learning_rate: Option<f64>,
    #[arg(long, value_name = "WD")]
    pub weight_decay: Option<f64>,
    /// Slices per optimizer step (truncated-backprop window).
    #[arg(long, value_name = "N")]
    pub slices_per_step: Option<usize>,
    /// Disable affine and brightness augmentation.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub no_augment: Option<bool>,
    /// Probability threshold for the per-slice masks.
    #[arg(long, value_name = "T")]
    pub threshold: Option<f64>,
    /// DBSCAN linking radius in mm.
    #[arg(long, value_name = "MM")]
    pub eps: Option<f64>,
    /// DBSCAN core-point neighbor count.
    #[arg(long, value_name = "N")]
    pub min_pts: Option<usize>,
    /// Count repeat hits on a claimed nodule as false positives.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub duplicates_as_fp: Option<bool>,
}
