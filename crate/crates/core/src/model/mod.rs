//! Network definition: configuration, parameters, and the forward graph.

pub mod gru;
pub mod network;
pub mod params;
pub mod plans;
pub mod swin;
pub mod unet;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Patch vectors concatenate RGB values; grayscale input is replicated.
pub const PATCH_RGB_CHANNELS: usize = 3;

/// The three ablation rows: plain encoder-decoder, plus windowed attention,
/// plus temporal recurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    BaselineUnet,
    SwinEnhanced,
    SwinTempo,
}

impl Variant {
    pub fn uses_swin(self) -> bool {
        !matches!(self, Variant::BaselineUnet)
    }

    pub fn uses_gru(self) -> bool {
        matches!(self, Variant::SwinTempo)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::BaselineUnet => "baseline_unet",
            Variant::SwinEnhanced => "swin_enhanced",
            Variant::SwinTempo => "swin_tempo",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline_unet" => Ok(Variant::BaselineUnet),
            "swin_enhanced" => Ok(Variant::SwinEnhanced),
            "swin_tempo" => Ok(Variant::SwinTempo),
            other => Err(CoreError::Validation(format!(
                "unknown variant {other:?} (expected baseline_unet, swin_enhanced, or swin_tempo)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwinConfig {
    /// Stage-one token width C; doubles at each of the three merges.
    pub embed_dim: usize,
    /// Blocks per stage; always four stages.
    pub depths: Vec<usize>,
    /// Attention heads per stage.
    pub heads: Vec<usize>,
    pub window_size: usize,
    pub patch_size: usize,
    pub mlp_ratio: f64,
    /// Channels of the source slice (1 for CT); replicated to RGB framing.
    pub in_channels: usize,
}

impl SwinConfig {
    pub fn stage_channels(&self, stage: usize) -> usize {
        self.embed_dim << stage
    }

    /// Channel width at the 1/32 bottleneck (8C).
    pub fn bottleneck_channels(&self) -> usize {
        self.embed_dim << 3
    }

    /// Length of a flattened patch vector (48 for patch size 4).
    pub fn patch_vector_len(&self) -> usize {
        PATCH_RGB_CHANNELS * self.patch_size * self.patch_size
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Square input size; slices are resized to this during preprocessing.
    pub input_size: usize,
    /// First-level channel count of the convolutional encoder.
    pub base_channels: usize,
    pub swin: SwinConfig,
}

impl ModelConfig {
    /// Paper-faithful defaults: 224 input, tiny-variant attention settings.
    pub fn paper(variant: Variant) -> Self {
        ModelConfig {
            variant,
            input_size: 224,
            base_channels: 16,
            swin: SwinConfig {
                embed_dim: 96,
                depths: vec![2, 2, 6, 2],
                heads: vec![3, 6, 12, 24],
                window_size: 7,
                patch_size: 4,
                mlp_ratio: 4.0,
                in_channels: 1,
            },
        }
    }

    /// Small configuration for tests: 64 input, C=8.
    pub fn tiny(variant: Variant) -> Self {
        ModelConfig {
            variant,
            input_size: 64,
            base_channels: 4,
            swin: SwinConfig {
                embed_dim: 8,
                depths: vec![1, 1, 2, 1],
                heads: vec![1, 2, 4, 8],
                window_size: 4,
                patch_size: 4,
                mlp_ratio: 2.0,
                in_channels: 1,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.swin;
        if s.depths.len() != 4 || s.heads.len() != 4 {
            return Err(CoreError::Validation(format!(
                "four stages required: got {} depths, {} heads",
                s.depths.len(),
                s.heads.len()
            )));
        }
        for (i, &h) in s.heads.iter().enumerate() {
            if h == 0 || s.stage_channels(i) % h != 0 {
                return Err(CoreError::Validation(format!(
                    "stage {i} channels {} not divisible by {h} heads",
                    s.stage_channels(i)
                )));
            }
        }
        if s.patch_size == 0 || s.window_size == 0 {
            return Err(CoreError::Validation("patch and window size must be >= 1".into()));
        }
        if s.mlp_ratio <= 0.0 {
            return Err(CoreError::Validation("mlp_ratio must be positive".into()));
        }
        if s.in_channels == 0 {
            return Err(CoreError::Validation("in_channels must be >= 1".into()));
        }
        if self.base_channels == 0 {
            return Err(CoreError::Validation("base_channels must be >= 1".into()));
        }
        // Five pools reach 1/32; the attention pyramid starts at 1/patch.
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(CoreError::Validation(format!(
                "input_size {} must be a positive multiple of 32",
                self.input_size
            )));
        }
        if self.input_size % s.patch_size != 0 {
            return Err(CoreError::Validation(format!(
                "input_size {} not divisible by patch size {}",
                self.input_size, s.patch_size
            )));
        }
        Ok(())
    }
}
