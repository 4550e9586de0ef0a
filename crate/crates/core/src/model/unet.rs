//! Convolutional contracting path, scale-wise fusion with the attention
//! pyramid, and the expanding path that turns the bottleneck back into
//! full-resolution per-slice logits.

use swintempo_autograd::Tid;

use crate::error::{CoreError, Result};
use crate::model::params::{decoder_stage, unet_channels, Fwd};
use crate::model::swin::Level;
use crate::model::ModelConfig;

/// Normalization epsilon for the whole-feature-map norms around each conv.
pub const GN_EPS: f64 = 1e-5;

/// Two 3x3 convolutions, each followed by a batch-independent
/// normalization over the whole feature map and a rectifier.
fn conv_block(f: &mut Fwd, x: Tid, prefix: &str) -> Tid {
    let (w1, b1) = (f.p(&format!("{prefix}.conv1.weight")), f.p(&format!("{prefix}.conv1.bias")));
    let x = f.g.conv2d(x, w1, b1, 1, 1);
    let (g1, e1) = (f.p(&format!("{prefix}.norm1.gamma")), f.p(&format!("{prefix}.norm1.beta")));
    let x = f.g.group_norm(x, g1, e1, GN_EPS);
    let x = f.g.relu(x);
    let (w2, b2) = (f.p(&format!("{prefix}.conv2.weight")), f.p(&format!("{prefix}.conv2.bias")));
    let x = f.g.conv2d(x, w2, b2, 1, 1);
    let (g2, e2) = (f.p(&format!("{prefix}.norm2.gamma")), f.p(&format!("{prefix}.norm2.beta")));
    let x = f.g.group_norm(x, g2, e2, GN_EPS);
    f.g.relu(x)
}

/// Contracting path over a raw `[h, w]` slice: six refined levels at
/// scales 1/1 through 1/32, channels doubling from `base_channels`. Each
/// level is the pre-pooling output of its two-convolution block.
pub fn contract(f: &mut Fwd, cfg: &ModelConfig, slice: Tid, h: usize, w: usize) -> Result<Vec<Level>> {
    if h % 32 != 0 || w % 32 != 0 {
        return Err(CoreError::Validation(format!("slice {h}x{w} not divisible by 32")));
    }
    let mut x = f.g.reshape(slice, &[1, h, w]);
    let (mut lh, mut lw) = (h, w);
    let mut levels = Vec::with_capacity(6);
    for level in 0..6 {
        if level > 0 {
            x = f.g.maxpool2(x);
            lh /= 2;
            lw /= 2;
        }
        x = conv_block(f, x, &format!("unet.enc{level}"));
        levels.push(Level { t: x, c: unet_channels(cfg, level), h: lh, w: lw });
    }
    Ok(levels)
}

/// Fused feature set consumed by the decoder: the four reconciled levels
/// at 1/4..1/32 plus the two shallow skips that only the convolutional
/// branch provides.
#[derive(Debug)]
pub struct FusedPyramid {
    pub fused: Vec<Level>,
    pub skip_half: Level,
    pub skip_full: Level,
}

/// Reconcile the two encoders at their four shared scales: project each
/// convolutional level to the attention branch's channel count with a 1x1
/// convolution, then sum element-wise. Without an attention pyramid the
/// projection alone passes through, which is the baseline ablation.
pub fn fuse(
    f: &mut Fwd,
    cfg: &ModelConfig,
    unet: &[Level],
    swin: Option<&[Level]>,
) -> Result<FusedPyramid> {
    assert_eq!(unet.len(), 6, "contracting path must emit six levels");
    let mut fused = Vec::with_capacity(4);
    for k in 0..4 {
        let u = unet[k + 2];
        let (wt, bt) = (f.p(&format!("fuse.level{k}.weight")), f.p(&format!("fuse.level{k}.bias")));
        let proj = f.g.conv2d(u.t, wt, bt, 1, 0);
        let c = cfg.swin.stage_channels(k);
        let t = match swin {
            Some(levels) => {
                let s = levels[k];
                if (s.h, s.w) != (u.h, u.w) {
                    return Err(CoreError::Validation(format!(
                        "fusion level {k}: attention features {}x{} vs conv features {}x{}",
                        s.h, s.w, u.h, u.w
                    )));
                }
                debug_assert_eq!(s.c, c, "pyramid channels fixed by config");
                f.g.add(proj, s.t)
            }
            None => proj,
        };
        fused.push(Level { t, c, h: u.h, w: u.w });
    }
    Ok(FusedPyramid { fused, skip_half: unet[1], skip_full: unet[0] })
}

/// Expanding path: five 2x transposed-convolution stages, each followed by
/// concatenation with the matching-scale skip and a two-convolution block,
/// then a 1x1 head producing one `[h, w]` logit map.
pub fn expand(f: &mut Fwd, cfg: &ModelConfig, pyr: &FusedPyramid, bottleneck: Level) -> Result<Tid> {
    let deepest = &pyr.fused[3];
    if (bottleneck.h, bottleneck.w) != (deepest.h, deepest.w) {
        return Err(CoreError::Validation(format!(
            "bottleneck {}x{} does not sit at the 1/32 scale {}x{}",
            bottleneck.h, bottleneck.w, deepest.h, deepest.w
        )));
    }
    let skips = [&pyr.fused[2], &pyr.fused[1], &pyr.fused[0], &pyr.skip_half, &pyr.skip_full];
    let mut x = bottleneck.t;
    let (mut h, mut w) = (bottleneck.h, bottleneck.w);
    for (k, skip) in skips.into_iter().enumerate() {
        let (wt, bt) = (f.p(&format!("dec.up{k}.weight")), f.p(&format!("dec.up{k}.bias")));
        x = f.g.conv_transpose2d(x, wt, bt, 2, 1, 1);
        h *= 2;
        w *= 2;
        if (skip.h, skip.w) != (h, w) {
            return Err(CoreError::Validation(format!(
                "decoder stage {k}: skip {}x{} does not match upsampled {h}x{w}",
                skip.h, skip.w
            )));
        }
        debug_assert_eq!(skip.c, decoder_stage(cfg, k).1, "skip channels fixed by config");
        x = f.g.concat(&[x, skip.t], 0);
        x = conv_block(f, x, &format!("dec.block{k}"));
    }
    let (hw, hb) = (f.p("dec.head.weight"), f.p("dec.head.bias"));
    let x = f.g.conv2d(x, hw, hb, 1, 0);
    Ok(f.g.reshape(x, &[h, w]))
}
