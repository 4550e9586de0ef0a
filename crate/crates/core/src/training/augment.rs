//! Paired slice/target augmentation: one random affine (scale, rotation,
//! shear, translation) applied to both, plus a brightness offset on the
//! slice alone. The target is resampled nearest-neighbor so it stays
//! binary.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Maximum magnitudes; each draw is uniform in the symmetric range, so
/// all-zero magnitudes give the identity transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Scale factor drawn from [1 - max, 1 + max].
    pub max_scale: f64,
    pub max_rotate_deg: f64,
    pub max_shear: f64,
    pub max_translate_px: f64,
    pub max_brightness: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            max_scale: 0.1,
            max_rotate_deg: 10.0,
            max_shear: 0.1,
            max_translate_px: 4.0,
            max_brightness: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            max_scale: 0.0,
            max_rotate_deg: 0.0,
            max_shear: 0.0,
            max_translate_px: 0.0,
            max_brightness: 0.0,
        }
    }
}

/// One concrete draw, reused across all slices of a volume so the stack
/// stays spatially coherent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineSample {
    pub scale: f64,
    pub rotate_deg: f64,
    pub shear: f64,
    pub translate: (f64, f64),
    pub brightness: f64,
}

impl AffineSample {
    pub const IDENTITY: AffineSample = AffineSample {
        scale: 1.0,
        rotate_deg: 0.0,
        shear: 0.0,
        translate: (0.0, 0.0),
        brightness: 0.0,
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

fn sym<R: Rng>(rng: &mut R, m: f64) -> f64 {
    if m == 0.0 {
        0.0
    } else {
        rng.gen_range(-m..=m)
    }
}

pub fn sample<R: Rng>(rng: &mut R, cfg: &AugmentConfig) -> AffineSample {
    AffineSample {
        scale: 1.0 + sym(rng, cfg.max_scale),
        rotate_deg: sym(rng, cfg.max_rotate_deg),
        shear: sym(rng, cfg.max_shear),
        translate: (sym(rng, cfg.max_translate_px), sym(rng, cfg.max_translate_px)),
        brightness: sym(rng, cfg.max_brightness),
    }
}

/// Inverse of the 2x2 linear part rotate * scale * shear, in (x, y)
/// coordinates.
fn inverse_linear(t: &AffineSample) -> [[f64; 2]; 2] {
    let th = t.rotate_deg.to_radians();
    let (sin, cos) = th.sin_cos();
    // m = R * S * Sh with S uniform and Sh shearing x by y.
    let m = [
        [t.scale * cos, t.scale * (cos * t.shear - sin)],
        [t.scale * sin, t.scale * (sin * t.shear + cos)],
    ];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
}

fn bilinear(img: &Array2<f32>, x: f64, y: f64) -> f64 {
    let (h, w) = img.dim();
    if x < -0.5 || y < -0.5 || x > w as f64 - 0.5 || y > h as f64 - 0.5 {
        return 0.0;
    }
    let xc = x.clamp(0.0, w as f64 - 1.0);
    let yc = y.clamp(0.0, h as f64 - 1.0);
    let (x0, y0) = (xc.floor() as usize, yc.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (xc - x0 as f64, yc - y0 as f64);
    let v00 = f64::from(img[(y0, x0)]);
    let v01 = f64::from(img[(y0, x1)]);
    let v10 = f64::from(img[(y1, x0)]);
    let v11 = f64::from(img[(y1, x1)]);
    (v00 * (1.0 - fx) + v01 * fx) * (1.0 - fy) + (v10 * (1.0 - fx) + v11 * fx) * fy
}

fn nearest(img: &Array2<f32>, x: f64, y: f64) -> f32 {
    let (h, w) = img.dim();
    let (xr, yr) = (x.round(), y.round());
    if xr < 0.0 || yr < 0.0 || xr >= w as f64 || yr >= h as f64 {
        return 0.0;
    }
    img[(yr as usize, xr as usize)]
}

/// Warp a slice/target pair by the same geometry. The slice resamples
/// bilinearly (out-of-frame reads as 0, the standardized background) and
/// then takes the brightness offset; the target resamples nearest.
pub fn apply(
    slice: &Array2<f32>,
    target: &Array2<f32>,
    t: &AffineSample,
) -> (Array2<f32>, Array2<f32>) {
    if t.is_identity() {
        return (slice.clone(), target.clone());
    }
    let (h, w) = slice.dim();
    let inv = inverse_linear(t);
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut out_s = Array2::<f32>::zeros((h, w));
    let mut out_t = Array2::<f32>::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let dx = c as f64 - cx - t.translate.0;
            let dy = r as f64 - cy - t.translate.1;
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
            out_s[(r, c)] = (bilinear(slice, sx, sy) + t.brightness) as f32;
            out_t[(r, c)] = nearest(target, sx, sy);
        }
    }
    (out_s, out_t)
}
