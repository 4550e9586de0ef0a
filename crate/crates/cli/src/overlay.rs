//! Optional PNG overlays for eyeballing detections: the slice in grayscale
//! with above-threshold pixels tinted red.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Axis;
use swintempo_core::candidates::ProbabilityMap;
use swintempo_core::error::{CoreError, Result};
use swintempo_core::volume::CTVolume;

/// Write one `<series>_z<slice>.png` per slice that has any pixel above the
/// threshold. Slices without detections produce no file.
pub fn write_overlays(
    dir: &Path,
    vol: &CTVolume,
    maps: &[ProbabilityMap],
    threshold: f64,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let (nz, ny, nx) = vol.shape();
    for pm in maps {
        if pm.slice_index >= nz || pm.values.dim() != (ny, nx) {
            return Err(CoreError::Validation(format!(
                "probability map {}/{} does not match volume {:?}",
                pm.series_id,
                pm.slice_index,
                vol.shape()
            )));
        }
        if !pm.values.iter().any(|&v| f64::from(v) > threshold) {
            continue;
        }
        let slice = vol.voxels.index_axis(Axis(0), pm.slice_index);
        let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
        for &v in slice.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let span = if hi > lo { hi - lo } else { 1.0 };
        let img = RgbImage::from_fn(nx as u32, ny as u32, |x, y| {
            let (r, c) = (y as usize, x as usize);
            let g = (255.0 * (slice[[r, c]] - lo) / span).round().clamp(0.0, 255.0) as u8;
            if f64::from(pm.values[[r, c]]) > threshold {
                Rgb([255, g / 3, g / 3])
            } else {
                Rgb([g, g, g])
            }
        });
        let path = dir.join(format!("{}_z{:03}.png", pm.series_id, pm.slice_index));
        img.save(&path).map_err(|e| match e {
            image::ImageError::IoError(io) => CoreError::io(path.clone(), io),
            other => CoreError::Format(format!("{}: {other}", path.display())),
        })?;
    }
    Ok(())
}
