//! Volume and annotation formats, plus sphere rasterization.
//!
//! A volume on disk is a `<name>.json` sidecar describing geometry plus a
//! `<name>.raw` payload of little-endian `f32`, Z-major (z, then y, then x).
//! Annotations are CSV rows in world millimeters. World and voxel
//! coordinates relate per axis as `world = origin + index * spacing`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone)]
pub struct CTVolume {
    pub series_id: String,
    /// `[Z, Y, X]`, Hounsfield units before preprocessing.
    pub voxels: Array3<f32>,
    /// `(sz, sy, sx)` in mm.
    pub spacing_mm: (f64, f64, f64),
    /// `(oz, oy, ox)` in mm.
    pub origin_mm: (f64, f64, f64),
}

impl CTVolume {
    /// `(Z, Y, X)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        let d = self.voxels.dim();
        (d.0, d.1, d.2)
    }

    /// World mm of the voxel center at `(z, y, x)`.
    pub fn voxel_to_world(&self, z: f64, y: f64, x: f64) -> (f64, f64, f64) {
        (
            self.origin_mm.0 + z * self.spacing_mm.0,
            self.origin_mm.1 + y * self.spacing_mm.1,
            self.origin_mm.2 + x * self.spacing_mm.2,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let (z, y, x) = self.shape();
        if z == 0 || y == 0 || x == 0 {
            return Err(CoreError::Validation("volume has an empty axis".into()));
        }
        let (sz, sy, sx) = self.spacing_mm;
        if !(sz > 0.0 && sy > 0.0 && sx > 0.0) {
            return Err(CoreError::Validation(format!(
                "spacing must be positive, got ({sz}, {sy}, {sx})"
            )));
        }
        if !self.voxels.iter().all(|v| v.is_finite()) {
            return Err(CoreError::Validation(format!(
                "volume {} contains non-finite voxels",
                self.series_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub series_id: String,
    /// `(x, y, z)` world mm.
    pub center_mm: (f64, f64, f64),
    pub diameter_mm: f64,
}

#[derive(Debug, Clone)]
pub struct LungMask {
    pub mask: Array3<u8>,
}

impl LungMask {
    pub fn new(mask: Array3<u8>) -> Result<Self> {
        if !mask.iter().all(|&v| v <= 1) {
            return Err(CoreError::Validation("lung mask values must be 0 or 1".into()));
        }
        Ok(LungMask { mask })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    series_id: String,
    shape: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn raw_path(path: &Path) -> PathBuf {
    path.with_extension("raw")
}

/// Read a sidecar + payload pair. `path` may carry either extension or none.
pub fn read_volume(path: &Path) -> Result<CTVolume> {
    let sc_path = sidecar_path(path);
    let text =
        fs::read_to_string(&sc_path).map_err(|e| CoreError::io(sc_path.clone(), e))?;
    let sc: Sidecar = serde_json::from_str(&text)
        .map_err(|e| CoreError::Format(format!("{}: {e}", sc_path.display())))?;
    let [z, y, x] = sc.shape;
    if z == 0 || y == 0 || x == 0 {
        return Err(CoreError::Format(format!("{}: empty shape", sc_path.display())));
    }

    let rp = raw_path(path);
    let bytes = fs::read(&rp).map_err(|e| CoreError::io(rp.clone(), e))?;
    let expect = z * y * x * 4;
    if bytes.len() != expect {
        return Err(CoreError::Format(format!(
            "{}: payload is {} bytes, shape {:?} needs {expect}",
            rp.display(),
            bytes.len(),
            sc.shape
        )));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let voxels = Array3::from_shape_vec((z, y, x), data).expect("length checked");
    let vol = CTVolume {
        series_id: sc.series_id,
        voxels,
        spacing_mm: (sc.spacing_mm[0], sc.spacing_mm[1], sc.spacing_mm[2]),
        origin_mm: (sc.origin_mm[0], sc.origin_mm[1], sc.origin_mm[2]),
    };
    vol.validate()?;
    Ok(vol)
}

/// Write the sidecar + payload pair; validates before touching the disk.
pub fn write_volume(vol: &CTVolume, path: &Path) -> Result<()> {
    vol.validate()?;
    let (z, y, x) = vol.shape();
    let sc = Sidecar {
        series_id: vol.series_id.clone(),
        shape: [z, y, x],
        spacing_mm: [vol.spacing_mm.0, vol.spacing_mm.1, vol.spacing_mm.2],
        origin_mm: [vol.origin_mm.0, vol.origin_mm.1, vol.origin_mm.2],
    };
    let sc_path = sidecar_path(path);
    let text = serde_json::to_string(&sc).expect("plain struct");
    fs::write(&sc_path, text).map_err(|e| CoreError::io(sc_path.clone(), e))?;

    let mut bytes = Vec::with_capacity(vol.voxels.len() * 4);
    for &v in vol.voxels.as_slice().expect("owned standard layout") {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let rp = raw_path(path);
    fs::write(&rp, bytes).map_err(|e| CoreError::io(rp, e))
}

/// Store a mask in the volume format with values {0.0, 1.0}.
pub fn write_mask(mask: &LungMask, like: &CTVolume, path: &Path) -> Result<()> {
    let vol = CTVolume {
        series_id: like.series_id.clone(),
        voxels: mask.mask.mapv(f32::from),
        spacing_mm: like.spacing_mm,
        origin_mm: like.origin_mm,
    };
    write_volume(&vol, path)
}

pub fn read_mask(path: &Path) -> Result<LungMask> {
    let vol = read_volume(path)?;
    let mut mask = Array3::zeros(vol.voxels.dim());
    for (m, &v) in mask.iter_mut().zip(vol.voxels.iter()) {
        if v == 1.0 {
            *m = 1u8;
        } else if v != 0.0 {
            return Err(CoreError::Format(format!(
                "mask {} has non-binary value {v}",
                vol.series_id
            )));
        }
    }
    LungMask::new(mask)
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationRow {
    series_id: String,
    coord_x: f64,
    coord_y: f64,
    coord_z: f64,
    diameter_mm: f64,
}

pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CoreError::Format(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for record in reader.deserialize::<AnnotationRow>() {
        let row = record.map_err(|e| CoreError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        if !(row.diameter_mm > 0.0) {
            return Err(CoreError::Validation(format!(
                "annotation for {} has non-positive diameter {}",
                row.series_id, row.diameter_mm
            )));
        }
        out.push(Annotation {
            series_id: row.series_id,
            center_mm: (row.coord_x, row.coord_y, row.coord_z),
            diameter_mm: row.diameter_mm,
        });
    }
    Ok(out)
}

pub fn write_annotations(anns: &[Annotation], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CoreError::Format(format!("{}: {e}", path.display())))?;
    if anns.is_empty() {
        // serde-driven writers only emit headers with the first record.
        writer
            .write_record(["series_id", "coord_x", "coord_y", "coord_z", "diameter_mm"])
            .map_err(|e| CoreError::Format(e.to_string()))?;
    }
    for a in anns {
        writer
            .serialize(AnnotationRow {
                series_id: a.series_id.clone(),
                coord_x: a.center_mm.0,
                coord_y: a.center_mm.1,
                coord_z: a.center_mm.2,
                diameter_mm: a.diameter_mm,
            })
            .map_err(|e| CoreError::Format(e.to_string()))?;
    }
    writer.flush().map_err(|e| CoreError::io(path, e))
}

/// Voxel mask of the union of annotation spheres: a voxel is set iff its
/// world-coordinate center lies within `diameter/2` of some center.
pub fn rasterize_annotations(
    shape: (usize, usize, usize),
    spacing_mm: (f64, f64, f64),
    origin_mm: (f64, f64, f64),
    anns: &[Annotation],
) -> Array3<u8> {
    let (nz, ny, nx) = shape;
    let (sz, sy, sx) = spacing_mm;
    let (oz, oy, ox) = origin_mm;
    let mut out = Array3::zeros((nz, ny, nx));
    // Index range whose world coordinate can lie within r of the center.
    let span = |c: f64, r: f64, o: f64, s: f64, n: usize| -> Option<(usize, usize)> {
        let lo = ((c - r - o) / s).ceil().max(0.0);
        let hi = ((c + r - o) / s).floor().min(n as f64 - 1.0);
        if lo > hi {
            None
        } else {
            Some((lo as usize, hi as usize))
        }
    };
    for a in anns {
        let (cx, cy, cz) = a.center_mm;
        let r = a.diameter_mm / 2.0;
        let (Some((zl, zh)), Some((yl, yh)), Some((xl, xh))) =
            (span(cz, r, oz, sz, nz), span(cy, r, oy, sy, ny), span(cx, r, ox, sx, nx))
        else {
            continue;
        };
        for z in zl..=zh {
            let dz = oz + z as f64 * sz - cz;
            for y in yl..=yh {
                let dy = oy + y as f64 * sy - cy;
                for x in xl..=xh {
                    let dx = ox + x as f64 * sx - cx;
                    if dz * dz + dy * dy + dx * dx <= r * r {
                        out[[z, y, x]] = 1;
                    }
                }
            }
        }
    }
    out
}
