//! Convolutional gated recurrence at the 1/32 bottleneck.
//!
//! The hidden state carries context from previously seen slices of a
//! volume to later ones; detection stays causal because nothing from
//! slices below the current one ever enters the state.

use ndarray::IxDyn;
use swintempo_autograd::{Arr, Tid};

use crate::error::{CoreError, Result};
use crate::model::params::Fwd;
use crate::model::ModelConfig;

/// Recurrent state between slices of one volume. `state` lives outside any
/// tape; callers re-enter it as a constant or carry the in-graph node when
/// unrolling through time.
#[derive(Debug, Clone)]
pub struct HiddenState {
    pub state: Arr,
    pub slice_index_last: i64,
}

/// Zero state for a fresh volume; `slice_index_last = -1` marks that no
/// slice has been absorbed yet.
pub fn init_hidden(cfg: &ModelConfig) -> HiddenState {
    let cb = cfg.swin.bottleneck_channels();
    let side = cfg.input_size / 32;
    HiddenState { state: Arr::zeros(IxDyn(&[cb, side, side])), slice_index_last: -1 }
}

fn gate(f: &mut Fwd, xh: Tid, name: &str) -> Tid {
    let (w, b) = (f.p(&format!("gru.{name}.weight")), f.p(&format!("gru.{name}.bias")));
    f.g.conv2d(xh, w, b, 1, 1)
}

/// One recurrence step. With update gate z, reset gate r, and candidate
/// state h~ from 3x3 padding-preserving convolutions over channel-stacked
/// inputs, the new state is the convex combination (1-z)*h + z*h~.
pub fn gru_step(f: &mut Fwd, x: Tid, h: Tid) -> Result<Tid> {
    let (xs, hs) = (f.g.value(x).shape().to_vec(), f.g.value(h).shape().to_vec());
    if xs != hs {
        return Err(CoreError::Validation(format!(
            "recurrent step input {xs:?} incompatible with state {hs:?}"
        )));
    }
    let xh = f.g.concat(&[x, h], 0);
    let z = gate(f, xh, "z");
    let z = f.g.sigmoid(z);
    let r = gate(f, xh, "r");
    let r = f.g.sigmoid(r);
    let rh = f.g.mul(r, h);
    let xrh = f.g.concat(&[x, rh], 0);
    let cand = gate(f, xrh, "h");
    let cand = f.g.tanh(cand);
    // (1-z)*h + z*cand, rewritten as h + z*(cand - h) to reuse nodes.
    let neg_h = f.g.affine(h, -1.0, 0.0);
    let delta = f.g.add(cand, neg_h);
    let step = f.g.mul(z, delta);
    Ok(f.g.add(h, step))
}
