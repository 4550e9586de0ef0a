//! Per-slice forward pass and whole-volume inference for every variant.

use ndarray::{Axis, Ix2};
use swintempo_autograd::Tid;

use crate::candidates::ProbabilityMap;
use crate::error::{CoreError, Result};
use crate::model::gru;
use crate::model::params::{Fwd, ParamStore};
use crate::model::plans::PlanCache;
use crate::model::swin::{self, Level};
use crate::model::unet;
use crate::model::ModelConfig;
use crate::volume::CTVolume;

/// Tape handles produced by one slice's forward pass.
#[derive(Debug)]
pub struct SliceForward {
    /// Raw logits `[h, w]`; apply sigmoid for probabilities.
    pub logits: Tid,
    /// Updated recurrent state, present only for the temporal variant.
    pub hidden: Option<Tid>,
}

/// Build the forward graph for one slice. `hidden` must be supplied (as a
/// constant or as the previous step's in-graph node) exactly when the
/// variant is temporal.
pub fn forward_slice(
    f: &mut Fwd,
    cfg: &ModelConfig,
    slice: Tid,
    h: usize,
    w: usize,
    hidden: Option<Tid>,
) -> Result<SliceForward> {
    let unet_levels = unet::contract(f, cfg, slice, h, w)?;
    let swin_levels =
        if cfg.variant.uses_swin() { Some(swin::encode(f, &cfg.swin, slice, h, w)?) } else { None };
    let pyr = unet::fuse(f, cfg, &unet_levels, swin_levels.as_deref())?;
    let deepest = pyr.fused[3];

    let (bottleneck, new_hidden) = if cfg.variant.uses_gru() {
        let prev = hidden.ok_or_else(|| {
            CoreError::Validation("temporal variant requires a hidden state".into())
        })?;
        let next = gru::gru_step(f, deepest.t, prev)?;
        (Level { t: next, ..deepest }, Some(next))
    } else {
        (deepest, None)
    };

    let logits = unet::expand(f, cfg, &pyr, bottleneck)?;
    Ok(SliceForward { logits, hidden: new_hidden })
}

/// Run inference over a whole preprocessed volume: the recurrent state is
/// initialized once, threaded through slices in ascending z, and each
/// slice's sigmoid output becomes one probability map. Slice k's map
/// depends only on slices 0..=k.
pub fn process_volume(
    vol: &CTVolume,
    cfg: &ModelConfig,
    store: &ParamStore,
    plans: &mut PlanCache,
) -> Result<Vec<ProbabilityMap>> {
    cfg.validate()?;
    let (nz, ny, nx) = vol.shape();
    if ny != cfg.input_size || nx != cfg.input_size {
        return Err(CoreError::Validation(format!(
            "volume slices are {ny}x{nx} but the model expects {0}x{0}",
            cfg.input_size
        )));
    }

    let mut hidden = cfg.variant.uses_gru().then(|| gru::init_hidden(cfg));
    let mut maps = Vec::with_capacity(nz);
    for z in 0..nz {
        let plane = vol.voxels.index_axis(Axis(0), z).mapv(|v| f64::from(v)).into_dyn();
        let mut f = Fwd::new(store, plans, false);
        let slice = f.g.constant(plane);
        let prev = hidden.as_ref().map(|hs| f.g.constant(hs.state.clone()));
        let out = forward_slice(&mut f, cfg, slice, ny, nx, prev)?;
        let probs = f.g.sigmoid(out.logits);
        let values = f
            .g
            .value(probs)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("logits are [h, w]")
            .mapv(|v| v as f32);
        if let (Some(hs), Some(ht)) = (hidden.as_mut(), out.hidden) {
            hs.state = f.g.value(ht).clone();
            hs.slice_index_last = z as i64;
        }
        maps.push(ProbabilityMap { values, slice_index: z, series_id: vol.series_id.clone() });
    }
    Ok(maps)
}
