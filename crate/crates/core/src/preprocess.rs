//! Intensity preprocessing and slice resizing.
//!
//! The pipeline order is clip -> lung mask -> standardize -> resize.
//! Standardization statistics are computed per volume, after masking.
//! Resizing updates the in-plane spacing and origin so world coordinates of
//! resampled pixels remain exact under `world = origin + index * spacing`.

use ndarray::{Array2, ArrayView2};

use crate::error::{CoreError, Result};
use crate::volume::{CTVolume, LungMask};

pub const HU_MIN: f32 = -1200.0;
pub const HU_MAX: f32 = 600.0;
const STD_EPS: f64 = 1e-8;

pub fn clip_hu(mut vol: CTVolume) -> CTVolume {
    vol.voxels.mapv_inplace(|v| v.clamp(HU_MIN, HU_MAX));
    vol
}

/// Set voxels outside the lung to the clip floor.
pub fn apply_lung_mask(mut vol: CTVolume, mask: &LungMask) -> Result<CTVolume> {
    if vol.voxels.dim() != mask.mask.dim() {
        return Err(CoreError::Validation(format!(
            "mask shape {:?} does not match volume shape {:?}",
            mask.mask.dim(),
            vol.voxels.dim()
        )));
    }
    for (v, &m) in vol.voxels.iter_mut().zip(mask.mask.iter()) {
        if m == 0 {
            *v = HU_MIN;
        }
    }
    Ok(vol)
}

/// Whole-volume standardization to mean 0, variance 1 (population variance,
/// f64 accumulation). A constant volume maps to all zeros via the epsilon
/// guard.
pub fn standardize(mut vol: CTVolume) -> CTVolume {
    let n = vol.voxels.len() as f64;
    let mean = vol.voxels.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = vol.voxels.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt().max(STD_EPS);
    vol.voxels.mapv_inplace(|v| ((v as f64 - mean) / denom) as f32);
    vol
}

/// Bilinear resize of one slice to `target x target`, half-pixel centers
/// with edge clamping (no overshoot); bit-identical copy when already at
/// the target size.
pub fn resize_slice(slice: ArrayView2<'_, f32>, target: usize) -> Array2<f32> {
    let (h, w) = slice.dim();
    if h == target && w == target {
        return slice.to_owned();
    }
    let mut out = Array2::zeros((target, target));
    let sy = h as f64 / target as f64;
    let sx = w as f64 / target as f64;
    for oy in 0..target {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..target {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            let top = slice[[y0, x0]] as f64 * (1.0 - wx) + slice[[y0, x1]] as f64 * wx;
            let bot = slice[[y1, x0]] as f64 * (1.0 - wx) + slice[[y1, x1]] as f64 * wx;
            out[[oy, ox]] = (top * (1.0 - wy) + bot * wy) as f32;
        }
    }
    out
}

/// Resize every slice of a volume to `target x target` and translate the
/// in-plane geometry: spacing scales by the size ratio and the origin shifts
/// to the new first-pixel center.
pub fn resize_volume(vol: &CTVolume, target: usize) -> CTVolume {
    let (nz, ny, nx) = vol.shape();
    let mut voxels = ndarray::Array3::zeros((nz, target, target));
    for z in 0..nz {
        let resized = resize_slice(vol.voxels.index_axis(ndarray::Axis(0), z), target);
        voxels.index_axis_mut(ndarray::Axis(0), z).assign(&resized);
    }
    let ry = ny as f64 / target as f64;
    let rx = nx as f64 / target as f64;
    CTVolume {
        series_id: vol.series_id.clone(),
        voxels,
        spacing_mm: (vol.spacing_mm.0, vol.spacing_mm.1 * ry, vol.spacing_mm.2 * rx),
        origin_mm: (
            vol.origin_mm.0,
            vol.origin_mm.1 + (0.5 * ry - 0.5) * vol.spacing_mm.1,
            vol.origin_mm.2 + (0.5 * rx - 0.5) * vol.spacing_mm.2,
        ),
    }
}

/// Full preprocessing chain for one volume.
pub fn preprocess(vol: CTVolume, mask: Option<&LungMask>, target: usize) -> Result<CTVolume> {
    let vol = clip_hu(vol);
    let vol = match mask {
        Some(m) => apply_lung_mask(vol, m)?,
        None => vol,
    };
    let vol = standardize(vol);
    Ok(resize_volume(&vol, target))
}
