use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use swintempo_core::candidates::{extract, sort_candidates, write_candidates, Geometry, NoduleCandidate};
use swintempo_core::checkpoint::{load_checkpoint, Checkpoint};
use swintempo_core::error::{CoreError, Result};
use swintempo_core::model::network::process_volume;
use swintempo_core::model::plans::PlanCache;
use swintempo_core::volume::read_volume;

use crate::commands::{ensure_dir, require_file, say, ExtractParams};
use crate::config::{echo_effective, pick, require, InferSection};
use crate::data::volume_bases;
use crate::opts::InferOpts;
use crate::overlay::write_overlays;

#[derive(Serialize)]
struct Effective {
    checkpoint: PathBuf,
    volumes: Vec<PathBuf>,
    out: PathBuf,
    threshold: f64,
    eps: f64,
    min_pts: usize,
    jobs: usize,
    overlay: bool,
}

pub fn run(opts: InferOpts, file: InferSection, seed: Option<u64>) -> Result<()> {
    let volumes = if opts.volumes.is_empty() {
        file.volumes.unwrap_or_default()
    } else {
        opts.volumes
    };
    let eff = Effective {
        checkpoint: require(opts.checkpoint, file.checkpoint, "--checkpoint")?,
        volumes,
        out: require(opts.out, file.out, "--out")?,
        threshold: pick(opts.threshold, file.threshold, 0.5),
        eps: pick(opts.eps, file.eps, 2.5),
        min_pts: pick(opts.min_pts, file.min_pts, 1),
        jobs: pick(opts.jobs, file.jobs, 1),
        overlay: pick(opts.overlay, file.overlay, false),
    };
    if eff.volumes.is_empty() {
        return Err(CoreError::Validation("missing --volume (repeat it per input)".into()));
    }
    if eff.jobs == 0 {
        return Err(CoreError::Validation("jobs must be at least 1".into()));
    }
    let params = ExtractParams { threshold: eff.threshold, eps: eff.eps, min_pts: eff.min_pts };
    params.validate()?;

    require_file(&eff.checkpoint)?;
    let ckpt = load_checkpoint(&eff.checkpoint)?;
    let bases = expand_volume_args(&eff.volumes)?;
    ensure_dir(&eff.out)?;
    let overlay_dir = eff.overlay.then(|| eff.out.join("overlays"));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(eff.jobs)
        .build()
        .map_err(|e| CoreError::Validation(format!("cannot build a {}-thread pool: {e}", eff.jobs)))?;
    let per_volume: Vec<Vec<NoduleCandidate>> = pool.install(|| {
        bases
            .par_iter()
            .map(|base| infer_one(base, &ckpt, &params, overlay_dir.as_deref()))
            .collect::<Result<_>>()
    })?;

    let mut all: Vec<NoduleCandidate> = per_volume.into_iter().flatten().collect();
    sort_candidates(&mut all);
    let csv_path = eff.out.join("candidates.csv");
    write_candidates(&csv_path, &all)?;
    echo_effective(&eff.out, seed, "infer", &eff)?;

    say!("wrote {} candidates from {} volumes to {}", all.len(), bases.len(), csv_path.display());
    Ok(())
}

/// Each `--volume` names either a volume (by base path or either file of
/// the pair) or a directory holding volumes.
fn expand_volume_args(args: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut bases = Vec::new();
    for arg in args {
        if arg.is_dir() {
            bases.extend(volume_bases(arg)?);
        } else if arg.with_extension("json").is_file() {
            bases.push(arg.clone());
        } else {
            return Err(CoreError::io(
                arg.clone(),
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such volume"),
            ));
        }
    }
    Ok(bases)
}

fn infer_one(
    base: &Path,
    ckpt: &Checkpoint,
    params: &ExtractParams,
    overlay_dir: Option<&Path>,
) -> Result<Vec<NoduleCandidate>> {
    let vol = read_volume(base)?;
    let mut plans = PlanCache::new();
    let maps = process_volume(&vol, &ckpt.model, &ckpt.params, &mut plans)?;
    if let Some(dir) = overlay_dir {
        write_overlays(dir, &vol, &maps, params.threshold)?;
    }
    let geom = Geometry { spacing_mm: vol.spacing_mm, origin_mm: vol.origin_mm };
    extract(&maps, params.threshold, params.eps, params.min_pts, geom)
}
