//! Loss, augmentation, and the optimization loop for all three variants.

pub mod adam;
pub mod augment;

use indexmap::IndexMap;
use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use swintempo_autograd::Tid;

use crate::checkpoint::{Checkpoint, RngState};
use crate::error::{CoreError, Result};
use crate::model::gru;
use crate::model::network;
use crate::model::params::{Fwd, ParamStore};
use crate::model::plans::PlanCache;
use crate::model::{ModelConfig, Variant};
use crate::rng;
use crate::training::adam::{AdamConfig, AdamState};
use crate::training::augment::AugmentConfig;
use crate::volume::CTVolume;

/// Predictions are clamped to [eps, 1-eps] before the logs.
pub const BCE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy between a probability map and a binary
/// target of the same shape. Inputs are f32 maps; accumulation is f64.
pub fn bce_loss(pred: &Array2<f32>, target: &Array2<f32>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(CoreError::Validation(format!(
            "bce_loss shapes differ: {:?} vs {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Err(CoreError::Validation("bce_loss over an empty map".into()));
    }
    debug_assert!(
        target.iter().all(|&v| v == 0.0 || v == 1.0),
        "targets must be binary"
    );
    let mut acc = 0.0;
    for (&p, &y) in pred.iter().zip(target) {
        let p = f64::from(p).clamp(BCE_EPS, 1.0 - BCE_EPS);
        let y = f64::from(y);
        acc -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(acc / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Window length for backpropagation through time; the hidden state is
    /// detached at window boundaries but carried across them.
    pub slices_per_step: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl TrainConfig {
    pub fn new(variant: Variant, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            variant,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            epochs,
            slices_per_step: 4,
            seed,
            augment: AugmentConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(CoreError::Validation("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(CoreError::Validation("epochs must be at least 1".into()));
        }
        if self.slices_per_step == 0 {
            return Err(CoreError::Validation("slices_per_step must be at least 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(CoreError::Validation("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// One training example: a preprocessed volume and its rasterized binary
/// target of identical shape.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub volume: CTVolume,
    pub target: Array3<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
}

pub struct TrainOutcome {
    /// Parameters (and optimizer moments) of the lowest-loss step.
    pub checkpoint: Checkpoint,
    pub log: Vec<StepRecord>,
    pub best_loss: f64,
}

struct Best {
    loss: f64,
    params: ParamStore,
    adam: AdamState,
    epoch: u64,
    rng: RngState,
}

/// Optimize from random initialization. Within each epoch, volumes are
/// visited in a shuffled order and each volume is warped by one augment
/// draw; slices then stream through windows of `slices_per_step`, each
/// window one optimizer step whose loss is the mean per-slice binary
/// cross-entropy on logits. For the temporal variant the hidden state is
/// carried (detached) across windows and gradients flow through the
/// in-window unroll. Everything is a deterministic function of the seed.
pub fn train(samples: &[TrainSample], model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    model.validate()?;
    cfg.validate()?;
    if model.variant != cfg.variant {
        return Err(CoreError::Validation(format!(
            "model variant {} does not match train variant {}",
            model.variant, cfg.variant
        )));
    }
    if samples.is_empty() {
        return Err(CoreError::Validation("training needs at least one volume".into()));
    }
    for s in samples {
        if s.volume.voxels.dim() != s.target.dim() {
            return Err(CoreError::Validation(format!(
                "target shape {:?} does not match volume {:?} for {}",
                s.target.dim(),
                s.volume.voxels.dim(),
                s.volume.series_id
            )));
        }
    }

    let mut params = ParamStore::init(model, cfg.seed)?;
    let adam_cfg = AdamConfig::new(cfg.learning_rate, cfg.weight_decay);
    let mut adam = AdamState::new();
    let mut plans = PlanCache::new();
    let mut rng = rng::stream(cfg.seed, "train");
    let mut log = Vec::new();
    let mut best: Option<Best> = None;
    let mut step: u64 = 0;

    for epoch in 0..cfg.epochs as u64 {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        for &vi in &order {
            let sample = &samples[vi];
            let warp = augment::sample(&mut rng, &cfg.augment);
            let (nz, ny, nx) = sample.volume.shape();
            let mut hidden = model.variant.uses_gru().then(|| gru::init_hidden(model));

            for start in (0..nz).step_by(cfg.slices_per_step) {
                let end = (start + cfg.slices_per_step).min(nz);
                let mut f = Fwd::new(&params, &mut plans, true);
                let mut h_tid = hidden.as_ref().map(|hs| f.g.constant(hs.state.clone()));
                let mut losses = Vec::with_capacity(end - start);
                for z in start..end {
                    let raw = sample.volume.voxels.index_axis(Axis(0), z).to_owned();
                    let tgt = sample.target.index_axis(Axis(0), z).to_owned();
                    let (ws, wt) = augment::apply(&raw, &tgt, &warp);
                    let slice = f.g.constant(ws.mapv(f64::from).into_dyn());
                    let target = f.g.constant(wt.mapv(f64::from).into_dyn());
                    let out = network::forward_slice(&mut f, model, slice, ny, nx, h_tid)?;
                    if out.hidden.is_some() {
                        h_tid = out.hidden;
                    }
                    losses.push(f.g.bce_with_logits(out.logits, target));
                }
                let loss_tid = mean_scalars(&mut f, &losses);
                let loss = f.g.value(loss_tid)[[0]];
                if !loss.is_finite() {
                    return Err(CoreError::NonFiniteLoss {
                        step: step as usize,
                        slices: format!("{} z{start}..{end}", sample.volume.series_id),
                    });
                }
                if best.as_ref().map_or(true, |b| loss < b.loss) {
                    best = Some(Best {
                        loss,
                        params: params.clone(),
                        adam: adam.clone(),
                        epoch,
                        rng: RngState { seed: rng.get_seed(), word_pos: rng.get_word_pos() },
                    });
                }
                f.g.backward(loss_tid);
                let grads: IndexMap<String, _> = f.grads();
                let carried = h_tid.map(|t| f.g.value(t).clone());
                drop(f);
                adam.step(&mut params, &grads, &adam_cfg);
                if let (Some(hs), Some(state)) = (hidden.as_mut(), carried) {
                    hs.state = state;
                    hs.slice_index_last = end as i64 - 1;
                }
                log.push(StepRecord { step, epoch, loss });
                step += 1;
            }
        }
    }

    let best = best.expect("at least one step ran");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model: model.clone(),
            epoch: best.epoch,
            rng: best.rng,
            params: best.params,
            adam: Some(best.adam),
        },
        best_loss: best.loss,
        log,
    })
}

/// Mean of scalar tape nodes.
fn mean_scalars(f: &mut Fwd, parts: &[Tid]) -> Tid {
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = f.g.add(acc, p);
    }
    f.g.affine(acc, 1.0 / parts.len() as f64, 0.0)
}

/// CSV training log: `step,epoch,loss`.
pub fn write_train_log(path: &std::path::Path, log: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CoreError::io(path, io),
        other => CoreError::Format(format!("{path:?}: {other:?}")),
    })?;
    for r in log {
        w.serialize(r).map_err(|e| CoreError::Format(format!("{path:?}: {e}")))?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))?;
    Ok(())
}
