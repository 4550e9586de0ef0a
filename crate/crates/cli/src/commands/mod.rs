//! One module per subcommand plus the small helpers they share.

pub mod crossval;
pub mod evaluate;
pub mod infer;
pub mod preprocess;
pub mod synth;
pub mod train;

use std::path::Path;

use swintempo_core::error::{CoreError, Result};
use swintempo_core::model::{ModelConfig, Variant};

/// `println!` that shrugs off a closed pipe (`swintempo ... | head`)
/// instead of panicking.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}
pub(crate) use say;

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))
}

/// Stat a file argument before handing it to a parser, so a missing path
/// surfaces as an I/O error rather than a format error.
pub fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CoreError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ))
    }
}

/// Build a model configuration from the preset name, variant name, and an
/// optional input-size override.
pub fn resolve_model(variant: &str, scale: &str, input_size: Option<usize>) -> Result<ModelConfig> {
    let variant: Variant = variant.parse()?;
    let mut cfg = match scale {
        "tiny" => ModelConfig::tiny(variant),
        "paper" => ModelConfig::paper(variant),
        other => {
            return Err(CoreError::Validation(format!(
                "unknown scale {other:?} (expected tiny or paper)"
            )))
        }
    };
    if let Some(size) = input_size {
        cfg.input_size = size;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Detection-extraction knobs shared by infer and crossval.
pub struct ExtractParams {
    pub threshold: f64,
    pub eps: f64,
    pub min_pts: usize,
}

impl ExtractParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(CoreError::Validation(format!(
                "threshold must be in (0, 1), got {}",
                self.threshold
            )));
        }
        if !(self.eps > 0.0) {
            return Err(CoreError::Validation(format!("eps must be positive, got {}", self.eps)));
        }
        if self.min_pts == 0 {
            return Err(CoreError::Validation("min-pts must be at least 1".into()));
        }
        Ok(())
    }
}
