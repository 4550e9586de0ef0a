use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use swintempo_core::error::{CoreError, Result};
use swintempo_core::preprocess;
use swintempo_core::volume::{read_volume, write_volume};

use crate::commands::{ensure_dir, say};
use crate::config::{echo_effective, pick, require, PreprocessSection};
use crate::data::{mask_base, read_mask, volume_bases};
use crate::opts::PreprocessOpts;

/// Bumped whenever the preprocessing math or the volume format changes, so
/// stale cache entries never resurface.
const CACHE_VERSION: u8 = 1;

#[derive(Serialize)]
struct Effective {
    input: PathBuf,
    out: PathBuf,
    target_size: usize,
    no_mask: bool,
}

pub fn run(opts: PreprocessOpts, file: PreprocessSection, seed: Option<u64>) -> Result<()> {
    let eff = Effective {
        input: require(opts.input, file.input, "--input")?,
        out: require(opts.out, file.out, "--out")?,
        target_size: pick(opts.target_size, file.target_size, 64),
        no_mask: pick(opts.no_mask, file.no_mask, false),
    };
    if eff.target_size == 0 {
        return Err(CoreError::Validation("target-size must be at least 1".into()));
    }

    let bases = volume_bases(&eff.input)?;
    ensure_dir(&eff.out)?;
    let cache = std::env::var_os("SWINTEMPO_CACHE").map(PathBuf::from);
    if let Some(dir) = &cache {
        ensure_dir(dir)?;
    }

    for base in &bases {
        let name = base.file_name().expect("bases carry file names");
        let out_base = eff.out.join(name);
        let mask_path = if eff.no_mask {
            None
        } else {
            let mb = mask_base(base);
            if !mb.with_extension("json").is_file() {
                return Err(CoreError::Validation(format!(
                    "no lung mask for {} (expected {}; pass --no-mask to skip isolation)",
                    base.display(),
                    mb.with_extension("json").display()
                )));
            }
            Some(mb)
        };

        let key = cache
            .as_deref()
            .map(|_| cache_key(base, mask_path.as_deref(), eff.target_size))
            .transpose()?;
        if let (Some(dir), Some(key)) = (&cache, &key) {
            if try_cache_hit(dir, key, &out_base)? {
                continue;
            }
        }

        let vol = read_volume(base)?;
        let mask = mask_path.as_deref().map(read_mask).transpose()?;
        let processed = preprocess::preprocess(vol, mask.as_ref(), eff.target_size)?;
        write_volume(&processed, &out_base)?;
        if let (Some(dir), Some(key)) = (&cache, &key) {
            store_cache(dir, key, &out_base)?;
        }
    }

    let anns = eff.input.join("annotations.csv");
    if anns.is_file() {
        let dst = eff.out.join("annotations.csv");
        fs::copy(&anns, &dst).map_err(|e| CoreError::io(dst, e))?;
    }
    echo_effective(&eff.out, seed, "preprocess", &eff)?;

    say!("preprocessed {} volumes into {}", bases.len(), eff.out.display());
    Ok(())
}

/// Content hash over everything the output depends on: both input files,
/// the mask pair when used, the target size, and the cache format version.
fn cache_key(base: &Path, mask: Option<&Path>, target: usize) -> Result<String> {
    let mut h = Sha256::new();
    h.update([CACHE_VERSION]);
    for ext in ["json", "raw"] {
        let p = base.with_extension(ext);
        h.update(fs::read(&p).map_err(|e| CoreError::io(p, e))?);
    }
    match mask {
        Some(mb) => {
            h.update([1]);
            for ext in ["json", "raw"] {
                let p = mb.with_extension(ext);
                h.update(fs::read(&p).map_err(|e| CoreError::io(p, e))?);
            }
        }
        None => h.update([0]),
    }
    h.update((target as u64).to_le_bytes());
    Ok(hex::encode(h.finalize()))
}

/// Copy a cached pair to the output if both halves exist.
fn try_cache_hit(cache: &Path, key: &str, out_base: &Path) -> Result<bool> {
    let cj = cache.join(format!("{key}.json"));
    let cr = cache.join(format!("{key}.raw"));
    if !(cj.is_file() && cr.is_file()) {
        return Ok(false);
    }
    copy(&cj, &out_base.with_extension("json"))?;
    copy(&cr, &out_base.with_extension("raw"))?;
    Ok(true)
}

fn store_cache(cache: &Path, key: &str, out_base: &Path) -> Result<()> {
    copy(&out_base.with_extension("json"), &cache.join(format!("{key}.json")))?;
    copy(&out_base.with_extension("raw"), &cache.join(format!("{key}.raw")))
}

fn copy(from: &Path, to: &Path) -> Result<()> {
    fs::copy(from, to).map(|_| ()).map_err(|e| CoreError::io(to, e))
}
