//! Hierarchical windowed-attention encoder.
//!
//! A slice enters as raw pixels, is cut into non-overlapping patches whose
//! pixel values (replicated to three channels) are linearly embedded, and
//! then flows through four stages of windowed multi-head self-attention
//! blocks separated by 2x2 patch merging. Each stage's output is one level
//! of the returned feature pyramid at scales 1/4 through 1/32.
//!
//! Attention windows tile the token grid; odd-indexed blocks cyclically
//! shift the grid by half a window before partitioning so information can
//! cross window boundaries, with a mask keeping tokens that were not
//! spatial neighbours from attending to each other. Grids not divisible by
//! the window are zero-padded before partitioning and cropped afterwards;
//! padded tokens are masked out of every real token's softmax.

use swintempo_autograd::{Arr, GatherPlan, Tid};

use crate::error::{CoreError, Result};
use crate::model::params::Fwd;
use crate::model::{SwinConfig, PATCH_RGB_CHANNELS};

/// Normalization epsilon shared by every layer norm in the encoder.
pub const LN_EPS: f64 = 1e-5;

/// Token grid on the tape: `t` is flat `[gh*gw, c]`, row-major over rows
/// then columns of the grid.
#[derive(Debug, Clone, Copy)]
pub struct Tokens {
    pub t: Tid,
    pub gh: usize,
    pub gw: usize,
    pub c: usize,
}

/// One pyramid level as a spatial feature map `[c, h, w]`.
#[derive(Debug, Clone, Copy)]
pub struct Level {
    pub t: Tid,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

fn round_up(x: usize, m: usize) -> usize {
    x.div_ceil(m) * m
}

/// Embed a raw `[h, w]` slice into a `[h/p, w/p]` token grid. Each patch
/// vector concatenates the patch pixels replicated across three channels,
/// matching the embedding width expected by imported pretrained weights.
pub fn patch_embed(f: &mut Fwd, cfg: &SwinConfig, slice: Tid, h: usize, w: usize) -> Result<Tokens> {
    let p = cfg.patch_size;
    if h % p != 0 || w % p != 0 {
        return Err(CoreError::Validation(format!(
            "slice {h}x{w} not divisible by patch size {p}"
        )));
    }
    let (gh, gw) = (h / p, w / p);
    let plan = f.plans.get_or_build("patch_embed", &[h, w, p], || patch_plan(h, w, p));
    let vecs = f.g.gather(slice, plan);
    let (wt, bt) = (f.p("swin.patch_embed.proj.weight"), f.p("swin.patch_embed.proj.bias"));
    let x = f.g.matmul(vecs, wt);
    let x = f.g.add(x, bt);
    let (ga, be) = (f.p("swin.patch_embed.norm.gamma"), f.p("swin.patch_embed.norm.beta"));
    let x = f.g.layer_norm(x, ga, be, LN_EPS);
    Ok(Tokens { t: x, gh, gw, c: cfg.embed_dim })
}

/// Patch-vector extraction plan: `[h, w]` pixels to `[gh*gw, 3*p*p]` rows.
/// The channel third of each row index is dropped so all three channels
/// replicate the same grayscale pixel.
pub(crate) fn patch_plan(h: usize, w: usize, p: usize) -> GatherPlan {
    let (gh, gw) = (h / p, w / p);
    GatherPlan::from_fn(vec![h, w], vec![gh * gw, PATCH_RGB_CHANNELS * p * p], |out| {
        let (gy, gx) = (out[0] / gw, out[0] % gw);
        let pix = out[1] % (p * p);
        vec![gy * p + pix / p, gx * p + pix % p]
    })
}

/// Roll-and-partition plan: padded grid `[hp, wp, c]` to windows
/// `[nw, win*win, c]`, with the cyclic shift folded into the indexing.
pub(crate) fn partition_plan(hp: usize, wp: usize, c: usize, win: usize, shift: usize) -> GatherPlan {
    let (nh, nw_) = (hp / win, wp / win);
    GatherPlan::from_fn(vec![hp, wp, c], vec![nh * nw_, win * win, c], |out| {
        let (widx, t, ch) = (out[0], out[1], out[2]);
        let r = (widx / nw_) * win + t / win;
        let cc = (widx % nw_) * win + t % win;
        vec![(r + shift) % hp, (cc + shift) % wp, ch]
    })
}

/// Inverse of [`partition_plan`]: windows back to the padded grid.
pub(crate) fn unpartition_plan(hp: usize, wp: usize, c: usize, win: usize, shift: usize) -> GatherPlan {
    let (nh, nw_) = (hp / win, wp / win);
    GatherPlan::from_fn(vec![nh * nw_, win * win, c], vec![hp, wp, c], |out| {
        let (r, cc, ch) = (out[0], out[1], out[2]);
        let rr = (r + hp - shift) % hp;
        let rc = (cc + wp - shift) % wp;
        vec![(rr / win) * nw_ + rc / win, (rr % win) * win + rc % win, ch]
    })
}

/// Per-head relative position bias, expanded from the learned
/// `[(2w-1)^2, heads]` table to `[heads, n, n]` logit offsets.
pub(crate) fn rel_bias_plan(win: usize, heads: usize) -> GatherPlan {
    let n = win * win;
    let side = 2 * win - 1;
    GatherPlan::from_fn(vec![side * side, heads], vec![heads, n, n], |out| {
        let (i, j) = (out[1], out[2]);
        let dr = i / win + win - 1 - j / win;
        let dc = i % win + win - 1 - j % win;
        vec![dr * side + dc, out[0]]
    })
}

/// 2x2 merge plan with replication at odd edges: `[gh, gw, c]` grid to
/// `[ceil(gh/2)*ceil(gw/2), 4c]` rows ordered top-left, bottom-left,
/// top-right, bottom-right.
pub(crate) fn merge_plan(gh: usize, gw: usize, c: usize) -> GatherPlan {
    const OFF: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];
    let (h2, w2) = (gh.div_ceil(2), gw.div_ceil(2));
    GatherPlan::from_fn(vec![gh, gw, c], vec![h2 * w2, 4 * c], |out| {
        let (dr, dc) = OFF[out[1] / c];
        let r = (2 * (out[0] / w2) + dr).min(gh - 1);
        let cc = (2 * (out[0] % w2) + dc).min(gw - 1);
        vec![r, cc, out[1] % c]
    })
}

/// Zone label of one rolled axis coordinate, or -1 for positions whose
/// pre-roll location lies in the padding.
fn axis_label(p: usize, extent: usize, padded: usize, win: usize, shift: usize) -> i32 {
    if (p + shift) % padded >= extent {
        return -1;
    }
    if p < padded - win {
        0
    } else if p < padded - shift {
        1
    } else {
        2
    }
}

/// Additive attention mask `[nw, 1, n, n]` for a shifted and/or padded
/// partition, or `None` when every window may attend freely. Entries are 0
/// where attention is allowed and -inf where it is not; tokens attend only
/// within their own contiguity zone, and padded tokens are isolated from
/// real ones (they attend among themselves, keeping softmax rows finite).
pub fn build_attn_mask(
    gh: usize,
    gw: usize,
    hp: usize,
    wp: usize,
    win: usize,
    shift: usize,
) -> Option<Arr> {
    if shift == 0 && hp == gh && wp == gw {
        return None;
    }
    let rows: Vec<i32> = (0..hp).map(|p| axis_label(p, gh, hp, win, shift)).collect();
    let cols: Vec<i32> = (0..wp).map(|p| axis_label(p, gw, wp, win, shift)).collect();
    let label = |r: usize, c: usize| -> i32 {
        if rows[r] < 0 || cols[c] < 0 {
            -1
        } else {
            3 * rows[r] + cols[c]
        }
    };
    let (nh, nw_) = (hp / win, wp / win);
    let n = win * win;
    let mut data = Vec::with_capacity(nh * nw_ * n * n);
    for wr in 0..nh {
        for wc in 0..nw_ {
            let labs: Vec<i32> = (0..n)
                .map(|t| label(wr * win + t / win, wc * win + t % win))
                .collect();
            for &li in &labs {
                for &lj in &labs {
                    data.push(if li == lj { 0.0 } else { f64::NEG_INFINITY });
                }
            }
        }
    }
    Some(Arr::from_shape_vec(ndarray::IxDyn(&[nh * nw_, 1, n, n]), data).expect("sized"))
}

/// Multi-head scaled dot-product attention over independent windows.
///
/// `windows` is `[nw, n, c]`; `bias` is a `[heads, n, n]` additive logit
/// term shared across windows; `mask` adds `[nw, 1, n, n]` on top of it.
/// Returns the projected output (same shape as the input) and the softmax
/// attention matrices `[nw, heads, n, n]`.
pub fn window_attention(
    f: &mut Fwd,
    windows: Tid,
    (nw, n, c): (usize, usize, usize),
    heads: usize,
    bias: Tid,
    mask: Option<&Arr>,
    prefix: &str,
) -> (Tid, Tid) {
    assert_eq!(c % heads, 0, "channels must split evenly across heads");
    let hd = c / heads;

    let flat = f.g.reshape(windows, &[nw * n, c]);
    let (qkv_w, qkv_b) = (f.p(&format!("{prefix}.qkv.weight")), f.p(&format!("{prefix}.qkv.bias")));
    let qkv = f.g.matmul(flat, qkv_w);
    let qkv = f.g.add(qkv, qkv_b);
    let qkv = f.g.reshape(qkv, &[nw, n, 3, heads, hd]);
    let qkv = f.g.permute(qkv, &[2, 0, 3, 1, 4]);
    let split = |which: usize, f: &mut Fwd| {
        let part = f.g.slice_axis(qkv, 0, which, 1);
        f.g.reshape(part, &[nw * heads, n, hd])
    };
    let q = split(0, f);
    let k = split(1, f);
    let v = split(2, f);

    let q = f.g.affine(q, 1.0 / (hd as f64).sqrt(), 0.0);
    let kt = f.g.permute(k, &[0, 2, 1]);
    let scores = f.g.bmm(q, kt);
    let scores = f.g.reshape(scores, &[nw, heads, n, n]);
    let scores = f.g.add(scores, bias);
    let scores = match mask {
        Some(m) => {
            let mt = f.g.constant(m.clone());
            f.g.add(scores, mt)
        }
        None => scores,
    };
    let probs = f.g.softmax_last(scores);

    let p3 = f.g.reshape(probs, &[nw * heads, n, n]);
    let ctx = f.g.bmm(p3, v);
    let ctx = f.g.reshape(ctx, &[nw, heads, n, hd]);
    let ctx = f.g.permute(ctx, &[0, 2, 1, 3]);
    let ctx = f.g.reshape(ctx, &[nw * n, c]);
    let (pw, pb) = (f.p(&format!("{prefix}.proj.weight")), f.p(&format!("{prefix}.proj.bias")));
    let out = f.g.matmul(ctx, pw);
    let out = f.g.add(out, pb);
    (f.g.reshape(out, &[nw, n, c]), probs)
}

/// (S)W-MSA over a full token grid: pad, roll, partition, attend, undo.
/// Input and output are flat `[gh*gw, c]`; residuals stay with the caller.
pub fn attn_grid(
    f: &mut Fwd,
    t: Tid,
    (gh, gw, c): (usize, usize, usize),
    heads: usize,
    win: usize,
    shifted: bool,
    prefix: &str,
) -> Tid {
    let shift = if shifted { win / 2 } else { 0 };
    let (hp, wp) = (round_up(gh, win), round_up(gw, win));
    let n = win * win;
    let nw = (hp / win) * (wp / win);

    let mut x = f.g.reshape(t, &[gh, gw, c]);
    if hp != gh || wp != gw {
        x = f.g.pad_axes(x, &[(0, hp - gh), (0, wp - gw), (0, 0)]);
    }
    let part =
        f.plans.get_or_build("win_part", &[hp, wp, c, win, shift], || partition_plan(hp, wp, c, win, shift));
    let x = f.g.gather(x, part);

    let table = f.p(&format!("{prefix}.rel_bias"));
    let bias_plan = f.plans.get_or_build("rel_bias", &[win, heads], || rel_bias_plan(win, heads));
    let bias = f.g.gather(table, bias_plan);
    let mask = build_attn_mask(gh, gw, hp, wp, win, shift);

    let (x, _probs) = window_attention(f, x, (nw, n, c), heads, bias, mask.as_ref(), prefix);

    let unpart = f
        .plans
        .get_or_build("win_unpart", &[hp, wp, c, win, shift], || unpartition_plan(hp, wp, c, win, shift));
    let mut x = f.g.gather(x, unpart);
    if hp != gh {
        x = f.g.slice_axis(x, 0, 0, gh);
    }
    if wp != gw {
        x = f.g.slice_axis(x, 1, 0, gw);
    }
    f.g.reshape(x, &[gh * gw, c])
}

/// One encoder block: pre-norm attention and pre-norm MLP, both residual.
pub fn swin_block(
    f: &mut Fwd,
    tokens: Tokens,
    heads: usize,
    win: usize,
    shifted: bool,
    prefix: &str,
) -> Tokens {
    let Tokens { t, gh, gw, c } = tokens;

    let (g1, b1) = (f.p(&format!("{prefix}.norm1.gamma")), f.p(&format!("{prefix}.norm1.beta")));
    let x = f.g.layer_norm(t, g1, b1, LN_EPS);
    let a = attn_grid(f, x, (gh, gw, c), heads, win, shifted, &format!("{prefix}.attn"));
    let t = f.g.add(t, a);

    let (g2, b2) = (f.p(&format!("{prefix}.norm2.gamma")), f.p(&format!("{prefix}.norm2.beta")));
    let y = f.g.layer_norm(t, g2, b2, LN_EPS);
    let (w1, c1) = (f.p(&format!("{prefix}.mlp.fc1.weight")), f.p(&format!("{prefix}.mlp.fc1.bias")));
    let y = f.g.matmul(y, w1);
    let y = f.g.add(y, c1);
    let y = f.g.gelu(y);
    let (w2, c2) = (f.p(&format!("{prefix}.mlp.fc2.weight")), f.p(&format!("{prefix}.mlp.fc2.bias")));
    let y = f.g.matmul(y, w2);
    let y = f.g.add(y, c2);
    let t = f.g.add(t, y);

    Tokens { t, gh, gw, c }
}

/// Downsample the grid 2x by concatenating each 2x2 neighbourhood
/// (order: top-left, bottom-left, top-right, bottom-right), normalizing,
/// and reducing 4c to 2c with a bias-free linear map. Odd grids replicate
/// their last row/column before merging.
pub fn patch_merge(f: &mut Fwd, tokens: Tokens, prefix: &str) -> Tokens {
    let Tokens { t, gh, gw, c } = tokens;
    let (h2, w2) = (gh.div_ceil(2), gw.div_ceil(2));
    let plan = f.plans.get_or_build("merge", &[gh, gw, c], || merge_plan(gh, gw, c));
    let x = f.g.reshape(t, &[gh, gw, c]);
    let x = f.g.gather(x, plan);
    let (ga, be) = (f.p(&format!("{prefix}.norm.gamma")), f.p(&format!("{prefix}.norm.beta")));
    let x = f.g.layer_norm(x, ga, be, LN_EPS);
    let w = f.p(&format!("{prefix}.reduction.weight"));
    let x = f.g.matmul(x, w);
    Tokens { t: x, gh: h2, gw: w2, c: 2 * c }
}

/// Full encoder: returns the four pyramid levels, each tapped after its
/// stage's blocks and laid out as a `[c, h, w]` spatial map.
pub fn encode(f: &mut Fwd, cfg: &SwinConfig, slice: Tid, h: usize, w: usize) -> Result<Vec<Level>> {
    let mut tokens = patch_embed(f, cfg, slice, h, w)?;
    let mut levels = Vec::with_capacity(cfg.depths.len());
    for stage in 0..cfg.depths.len() {
        let heads = cfg.heads[stage];
        for block in 0..cfg.depths[stage] {
            let prefix = format!("swin.stage{stage}.block{block}");
            tokens = swin_block(f, tokens, heads, cfg.window_size, block % 2 == 1, &prefix);
        }
        let grid = f.g.reshape(tokens.t, &[tokens.gh, tokens.gw, tokens.c]);
        let map = f.g.permute(grid, &[2, 0, 1]);
        levels.push(Level { t: map, c: tokens.c, h: tokens.gh, w: tokens.gw });
        if stage + 1 < cfg.depths.len() {
            tokens = patch_merge(f, tokens, &format!("swin.merge{stage}"));
        }
    }
    Ok(levels)
}
