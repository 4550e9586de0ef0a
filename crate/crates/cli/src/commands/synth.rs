use std::path::PathBuf;

use serde::Serialize;
use swintempo_core::error::Result;
use swintempo_core::phantom::{generate_phantom, PhantomConfig};
use swintempo_core::volume::{write_annotations, write_volume, Annotation};

use crate::commands::{ensure_dir, say};
use crate::config::{echo_effective, pick, require, SynthSection};
use crate::data::{mask_base, write_mask};
use crate::opts::SynthOpts;

#[derive(Serialize)]
struct Effective {
    out: PathBuf,
    n_volumes: usize,
    slices: usize,
    height: usize,
    width: usize,
    nodules_min: usize,
    nodules_max: usize,
    radius_min: f64,
    radius_max: f64,
    texture: f64,
}

pub fn run(opts: SynthOpts, file: SynthSection, seed: Option<u64>) -> Result<()> {
    let defaults = PhantomConfig::default();
    let eff = Effective {
        out: require(opts.out, file.out, "--out")?,
        n_volumes: pick(opts.n_volumes, file.n_volumes, defaults.n_volumes),
        slices: pick(opts.slices, file.slices, defaults.shape.0),
        height: pick(opts.height, file.height, defaults.shape.1),
        width: pick(opts.width, file.width, defaults.shape.2),
        nodules_min: pick(opts.nodules_min, file.nodules_min, defaults.nodules_per_volume.0),
        nodules_max: pick(opts.nodules_max, file.nodules_max, defaults.nodules_per_volume.1),
        radius_min: pick(opts.radius_min, file.radius_min, defaults.nodule_radius_mm.0),
        radius_max: pick(opts.radius_max, file.radius_max, defaults.nodule_radius_mm.1),
        texture: pick(opts.texture, file.texture, defaults.background_texture),
    };
    let seed = seed.unwrap_or(defaults.seed);

    let cfg = PhantomConfig {
        n_volumes: eff.n_volumes,
        shape: (eff.slices, eff.height, eff.width),
        nodules_per_volume: (eff.nodules_min, eff.nodules_max),
        nodule_radius_mm: (eff.radius_min, eff.radius_max),
        background_texture: eff.texture,
        seed,
    };
    let cases = generate_phantom(&cfg)?;

    ensure_dir(&eff.out)?;
    let mut annotations: Vec<Annotation> = Vec::new();
    for case in &cases {
        let base = eff.out.join(&case.volume.series_id);
        write_volume(&case.volume, &base)?;
        write_mask(&case.mask, &case.volume.series_id, &case.volume, &mask_base(&base))?;
        annotations.extend(case.annotations.iter().cloned());
    }
    write_annotations(&annotations, &eff.out.join("annotations.csv"))?;
    echo_effective(&eff.out, Some(seed), "synth", &eff)?;

    say!(
        "wrote {} volumes ({} nodules) to {}",
        cases.len(),
        annotations.len(),
        eff.out.display()
    );
    Ok(())
}
