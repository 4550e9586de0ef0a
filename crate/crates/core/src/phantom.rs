//! Synthetic phantom volumes with known ground truth.
//!
//! Each phantom is a lung-like background (-800 HU plus Gaussian texture)
//! inside an ellipsoidal mask, with non-overlapping bright spheres at 0 HU
//! for nodules. Spacing is fixed at 1 mm isotropic with origin 0, and the
//! spheres are painted with the same voxel-center rule the rasterizer uses,
//! so emitted annotations reproduce the bright voxels exactly.

use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CoreError, Result};
use crate::rng;
use crate::volume::{rasterize_annotations, Annotation, CTVolume, LungMask};

pub const BACKGROUND_HU: f32 = -800.0;
pub const NODULE_HU: f32 = 0.0;

const PLACEMENT_RETRIES: usize = 200;

#[derive(Debug, Clone)]
pub struct PhantomConfig {
    pub n_volumes: usize,
    /// `(Z, Y, X)`; every component must be at least 8.
    pub shape: (usize, usize, usize),
    /// Inclusive range of nodules per volume.
    pub nodules_per_volume: (usize, usize),
    /// Nodule radius range in mm, `lo < hi`.
    pub nodule_radius_mm: (f64, f64),
    /// Gaussian noise sigma in HU added to the background.
    pub background_texture: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            n_volumes: 4,
            shape: (16, 64, 64),
            nodules_per_volume: (1, 3),
            nodule_radius_mm: (3.0, 6.0),
            background_texture: 50.0,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    fn validate(&self) -> Result<()> {
        let (z, y, x) = self.shape;
        if z < 8 || y < 8 || x < 8 {
            return Err(CoreError::Validation(format!(
                "phantom shape components must be >= 8, got ({z}, {y}, {x})"
            )));
        }
        if self.nodules_per_volume.0 > self.nodules_per_volume.1 {
            return Err(CoreError::Validation("empty nodules_per_volume range".into()));
        }
        if !(self.nodule_radius_mm.0 > 0.0 && self.nodule_radius_mm.0 <= self.nodule_radius_mm.1)
        {
            return Err(CoreError::Validation("empty or non-positive radius range".into()));
        }
        if self.background_texture < 0.0 {
            return Err(CoreError::Validation("negative noise amplitude".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub volume: CTVolume,
    pub mask: LungMask,
    pub annotations: Vec<Annotation>,
}

struct Ellipsoid {
    center: (f64, f64, f64),
    semi: (f64, f64, f64),
}

impl Ellipsoid {
    /// Normalized radius of a world point; <= 1 is inside.
    fn level(&self, z: f64, y: f64, x: f64) -> f64 {
        let dz = (z - self.center.0) / self.semi.0;
        let dy = (y - self.center.1) / self.semi.1;
        let dx = (x - self.center.2) / self.semi.2;
        dz * dz + dy * dy + dx * dx
    }

    /// Whether a sphere of radius r around the point stays inside, using the
    /// conservative per-axis shrink of the semi-axes.
    fn contains_sphere(&self, z: f64, y: f64, x: f64, r: f64) -> bool {
        let (az, ay, ax) = (self.semi.0 - r, self.semi.1 - r, self.semi.2 - r);
        if az <= 0.0 || ay <= 0.0 || ax <= 0.0 {
            return false;
        }
        let dz = (z - self.center.0) / az;
        let dy = (y - self.center.1) / ay;
        let dx = (x - self.center.2) / ax;
        dz * dz + dy * dy + dx * dx <= 1.0
    }
}

pub fn generate_phantom(cfg: &PhantomConfig) -> Result<Vec<PhantomCase>> {
    cfg.validate()?;
    (0..cfg.n_volumes).map(|i| generate_one(cfg, i)).collect()
}

fn generate_one(cfg: &PhantomConfig, index: usize) -> Result<PhantomCase> {
    let (nz, ny, nx) = cfg.shape;
    let series_id = format!("phantom-{}-{index:03}", cfg.seed);
    let mut rng = rng::stream(cfg.seed, &format!("phantom.vol{index}"));

    let lung = Ellipsoid {
        center: ((nz - 1) as f64 / 2.0, (ny - 1) as f64 / 2.0, (nx - 1) as f64 / 2.0),
        semi: (0.48 * nz as f64, 0.44 * ny as f64, 0.44 * nx as f64),
    };

    let mut mask = Array3::zeros((nz, ny, nx));
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if lung.level(z as f64, y as f64, x as f64) <= 1.0 {
                    mask[[z, y, x]] = 1u8;
                }
            }
        }
    }

    let noise = Normal::new(0.0, cfg.background_texture.max(f64::MIN_POSITIVE))
        .expect("validated sigma");
    let mut voxels = Array3::from_elem((nz, ny, nx), BACKGROUND_HU);
    if cfg.background_texture > 0.0 {
        for v in voxels.iter_mut() {
            *v = BACKGROUND_HU + noise.sample(&mut rng) as f32;
        }
    }

    let n_nodules = rng.gen_range(cfg.nodules_per_volume.0..=cfg.nodules_per_volume.1);
    let mut placed: Vec<((f64, f64, f64), f64)> = Vec::with_capacity(n_nodules);
    for k in 0..n_nodules {
        let mut accepted = false;
        for _ in 0..PLACEMENT_RETRIES {
            let r = rng.gen_range(cfg.nodule_radius_mm.0..=cfg.nodule_radius_mm.1);
            let z = rng.gen_range(0.0..(nz - 1) as f64);
            let y = rng.gen_range(0.0..(ny - 1) as f64);
            let x = rng.gen_range(0.0..(nx - 1) as f64);
            if !lung.contains_sphere(z, y, x, r) {
                continue;
            }
            // 1 mm clearance between sphere surfaces.
            let clear = placed.iter().all(|&((pz, py, px), pr)| {
                let d2 = (z - pz).powi(2) + (y - py).powi(2) + (x - px).powi(2);
                d2 > (r + pr + 1.0).powi(2)
            });
            if clear {
                placed.push(((z, y, x), r));
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(CoreError::Generation(format!(
                "could not place nodule {k} of {n_nodules} in {series_id} after {PLACEMENT_RETRIES} retries"
            )));
        }
    }

    // World == voxel coordinates here (spacing 1, origin 0). Annotations are
    // (x, y, z) ordered.
    let annotations: Vec<Annotation> = placed
        .iter()
        .map(|&((z, y, x), r)| Annotation {
            series_id: series_id.clone(),
            center_mm: (x, y, z),
            diameter_mm: 2.0 * r,
        })
        .collect();

    let painted = rasterize_annotations((nz, ny, nx), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), &annotations);
    for (v, &p) in voxels.iter_mut().zip(painted.iter()) {
        if p == 1 {
            *v = NODULE_HU;
        }
    }

    let volume = CTVolume {
        series_id,
        voxels,
        spacing_mm: (1.0, 1.0, 1.0),
        origin_mm: (0.0, 0.0, 0.0),
    };
    Ok(PhantomCase { volume, mask: LungMask::new(mask)?, annotations })
}
