//! TOML config loading, flag/file/default resolution, and the effective
//! config echoed into every output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use swintempo_core::error::{CoreError, Result};

/// On-disk mirror of the flag surface. Sections and field names match the
/// subcommands and their flags one to one, so an echoed effective config
/// is itself a valid `--config` input.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub synth: Option<SynthSection>,
    pub preprocess: Option<PreprocessSection>,
    pub train: Option<TrainSection>,
    pub infer: Option<InferSection>,
    pub evaluate: Option<EvaluateSection>,
    pub crossval: Option<CrossvalSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub out: Option<PathBuf>,
    pub n_volumes: Option<usize>,
    pub slices: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub nodules_min: Option<usize>,
    pub nodules_max: Option<usize>,
    pub radius_min: Option<f64>,
    pub radius_max: Option<f64>,
    pub texture: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSection {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub target_size: Option<usize>,
    pub no_mask: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub variant: Option<String>,
    pub scale: Option<String>,
    pub input_size: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub slices_per_step: Option<usize>,
    pub no_augment: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferSection {
    pub checkpoint: Option<PathBuf>,
    pub volumes: Option<Vec<PathBuf>>,
    pub out: Option<PathBuf>,
    pub threshold: Option<f64>,
    pub eps: Option<f64>,
    pub min_pts: Option<usize>,
    pub jobs: Option<usize>,
    pub overlay: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub candidates: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub n_scans: Option<usize>,
    pub out: Option<PathBuf>,
    pub duplicates_as_fp: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossvalSection {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub folds: Option<usize>,
    pub variant: Option<String>,
    pub scale: Option<String>,
    pub input_size: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub slices_per_step: Option<usize>,
    pub no_augment: Option<bool>,
    pub threshold: Option<f64>,
    pub eps: Option<f64>,
    pub min_pts: Option<usize>,
    pub duplicates_as_fp: Option<bool>,
}

pub fn load(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    toml::from_str(&text)
        .map_err(|e| CoreError::Format(format!("config {}: {e}", path.display())))
}

/// Flag beats file beats default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Flag beats file; no default exists.
pub fn require<T>(flag: Option<T>, file: Option<T>, flag_name: &str) -> Result<T> {
    flag.or(file).ok_or_else(|| {
        CoreError::Validation(format!("missing {flag_name} (pass the flag or set it in --config)"))
    })
}

/// Write the fully resolved parameters of one run as
/// `<dir>/effective-config.toml`, shaped exactly like an input config file.
pub fn echo_effective<T: Serialize>(
    dir: &Path,
    seed: Option<u64>,
    section: &str,
    params: &T,
) -> Result<()> {
    let to_format = |e: toml::ser::Error| CoreError::Format(format!("effective config: {e}"));
    let mut root = toml::Table::new();
    if let Some(seed) = seed {
        root.insert("seed".into(), toml::Value::try_from(seed).map_err(to_format)?);
    }
    root.insert(section.into(), toml::Value::try_from(params).map_err(to_format)?);
    let text = toml::to_string_pretty(&root).map_err(to_format)?;
    let path = dir.join("effective-config.toml");
    fs::write(&path, text).map_err(|e| CoreError::io(path, e))
}
