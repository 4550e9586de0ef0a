//! Dataset directory layout shared by the subcommands: one
//! `<series>.json` + `<series>.raw` pair per volume, an optional
//! `<series>_mask.{json,raw}` companion pair, and one `annotations.csv`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use swintempo_core::error::{CoreError, Result};
use swintempo_core::training::TrainSample;
use swintempo_core::volume::{
    rasterize_annotations, read_volume, Annotation, CTVolume, LungMask,
};

/// Series base paths (extension stripped) under `dir`, sorted by name.
/// Mask pairs are companions of their series, not series of their own.
pub fn volume_bases(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CoreError::io(dir, e))?;
    let mut bases = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CoreError::io(dir, e))?;
        let path = entry.path();
        if path.extension().map_or(true, |e| e != "json") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if stem.ends_with("_mask") {
            continue;
        }
        bases.push(path.with_extension(""));
    }
    bases.sort();
    if bases.is_empty() {
        return Err(CoreError::Validation(format!(
            "no volumes (*.json sidecars) found in {}",
            dir.display()
        )));
    }
    Ok(bases)
}

/// `<dir>/<series>` -> `<dir>/<series>_mask`.
pub fn mask_base(base: &Path) -> PathBuf {
    let mut name = base.file_name().map_or_else(OsString::new, OsString::from);
    name.push("_mask");
    base.with_file_name(name)
}

pub fn annotations_path(dir: &Path) -> PathBuf {
    dir.join("annotations.csv")
}

/// A mask rides the same sidecar format as a volume, with voxels 0 or 1.
pub fn read_mask(base: &Path) -> Result<LungMask> {
    let vol = read_volume(base)?;
    if vol.voxels.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(CoreError::Validation(format!(
            "mask {} has voxels other than 0 and 1",
            base.display()
        )));
    }
    LungMask::new(vol.voxels.mapv(|v| v as u8))
}

pub fn write_mask(mask: &LungMask, series_id: &str, like: &CTVolume, base: &Path) -> Result<()> {
    let vol = CTVolume {
        series_id: format!("{series_id}_mask"),
        voxels: mask.mask.mapv(f32::from),
        spacing_mm: like.spacing_mm,
        origin_mm: like.origin_mm,
    };
    swintempo_core::volume::write_volume(&vol, base)
}

/// Pair every volume with its rasterized annotation target.
pub fn build_samples(volumes: Vec<CTVolume>, anns: &[Annotation]) -> Vec<TrainSample> {
    volumes
        .into_iter()
        .map(|vol| {
            let mine: Vec<Annotation> =
                anns.iter().filter(|a| a.series_id == vol.series_id).cloned().collect();
            let target =
                rasterize_annotations(vol.shape(), vol.spacing_mm, vol.origin_mm, &mine)
                    .mapv(f32::from);
            TrainSample { volume: vol, target }
        })
        .collect()
}
