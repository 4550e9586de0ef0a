//! Named parameter tensors and the forward-pass binder.

use indexmap::IndexMap;
use ndarray::IxDyn;
use rand_distr::{Distribution, Normal};
use swintempo_autograd::{Arr, Graph, Tid};

use crate::error::{CoreError, Result};
use crate::model::plans::PlanCache;
use crate::model::ModelConfig;
use crate::rng;

/// All model parameters, keyed by hierarchical names
/// (`swin.stage0.block0.attn.qkv.weight`, `dec.up3.bias`, ...). Insertion
/// order is fixed by the builder, which makes iteration, initialization,
/// and checkpoint layout deterministic.
#[derive(Debug, Clone)]
pub struct ParamStore {
    tensors: IndexMap<String, Arr>,
}

impl ParamStore {
    /// Seeded random initialization for the given variant: normal(0, 0.02)
    /// for token-space linear maps, He-scaled normal for convolutions, ones
    /// and zeros for normalization affines, zeros for biases and the
    /// relative position bias tables.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut b = Builder { rng: rng::stream(seed, "init"), tensors: IndexMap::new() };
        if cfg.variant.uses_swin() {
            build_swin(cfg, &mut b);
        }
        build_unet(cfg, &mut b);
        build_fuse(cfg, &mut b);
        if cfg.variant.uses_gru() {
            build_gru(cfg, &mut b);
        }
        build_decoder(cfg, &mut b);
        Ok(ParamStore { tensors: b.tensors })
    }

    pub fn from_tensors(tensors: IndexMap<String, Arr>) -> Self {
        ParamStore { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Arr> {
        self.tensors.get(name)
    }

    pub fn set(&mut self, name: &str, value: Arr) -> Result<()> {
        match self.tensors.get_mut(name) {
            Some(slot) => {
                if slot.shape() != value.shape() {
                    return Err(CoreError::Validation(format!(
                        "shape mismatch for {name}: store has {:?}, got {:?}",
                        slot.shape(),
                        value.shape()
                    )));
                }
                *slot = value;
                Ok(())
            }
            None => Err(CoreError::Validation(format!("unknown parameter {name}"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Arr)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Arr)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn tensor_count(&self) -> usize {
        self.tensors.len()
    }

    /// Total scalar parameter count.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.tensors.keys().any(|k| k.starts_with(prefix))
    }
}

struct Builder {
    rng: rand_chacha::ChaCha8Rng,
    tensors: IndexMap<String, Arr>,
}

impl Builder {
    fn normal(&mut self, name: String, shape: &[usize], std: f64) {
        let dist = Normal::new(0.0, std).expect("positive std");
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.tensors.insert(name, Arr::from_shape_vec(IxDyn(shape), data).expect("sized"));
    }

    fn linear(&mut self, name: &str, shape: &[usize]) {
        self.normal(name.to_string(), shape, 0.02);
    }

    fn conv(&mut self, name: &str, shape: &[usize]) {
        // He scaling over the receptive field; shape[1..] is (cin, kh, kw)
        // for conv and (cout, kh, kw) for conv-transpose, but fan-in uses
        // the input channel axis, which callers place first after cout.
        let fan_in: usize = shape[1..].iter().product();
        self.normal(name.to_string(), shape, (2.0 / fan_in as f64).sqrt());
    }

    fn zeros(&mut self, name: &str, shape: &[usize]) {
        self.tensors.insert(name.to_string(), Arr::zeros(IxDyn(shape)));
    }

    fn ones(&mut self, name: &str, shape: &[usize]) {
        self.tensors.insert(name.to_string(), Arr::ones(IxDyn(shape)));
    }

    fn norm_affine(&mut self, prefix: &str, ch: usize) {
        self.ones(&format!("{prefix}.gamma"), &[ch]);
        self.zeros(&format!("{prefix}.beta"), &[ch]);
    }
}

fn build_swin(cfg: &ModelConfig, b: &mut Builder) {
    let s = &cfg.swin;
    let c = s.embed_dim;
    b.linear("swin.patch_embed.proj.weight", &[s.patch_vector_len(), c]);
    b.zeros("swin.patch_embed.proj.bias", &[c]);
    b.norm_affine("swin.patch_embed.norm", c);

    let bias_entries = (2 * s.window_size - 1).pow(2);
    for (stage, (&depth, &heads)) in s.depths.iter().zip(&s.heads).enumerate() {
        let ch = s.stage_channels(stage);
        let hidden = (ch as f64 * s.mlp_ratio).round() as usize;
        for block in 0..depth {
            let p = format!("swin.stage{stage}.block{block}");
            b.norm_affine(&format!("{p}.norm1"), ch);
            b.linear(&format!("{p}.attn.qkv.weight"), &[ch, 3 * ch]);
            b.zeros(&format!("{p}.attn.qkv.bias"), &[3 * ch]);
            b.linear(&format!("{p}.attn.proj.weight"), &[ch, ch]);
            b.zeros(&format!("{p}.attn.proj.bias"), &[ch]);
            b.zeros(&format!("{p}.attn.rel_bias"), &[bias_entries, heads]);
            b.norm_affine(&format!("{p}.norm2"), ch);
            b.linear(&format!("{p}.mlp.fc1.weight"), &[ch, hidden]);
            b.zeros(&format!("{p}.mlp.fc1.bias"), &[hidden]);
            b.linear(&format!("{p}.mlp.fc2.weight"), &[hidden, ch]);
            b.zeros(&format!("{p}.mlp.fc2.bias"), &[ch]);
        }
        if stage < 3 {
            b.norm_affine(&format!("swin.merge{stage}.norm"), 4 * ch);
            b.linear(&format!("swin.merge{stage}.reduction.weight"), &[4 * ch, 2 * ch]);
        }
    }
}

/// Encoder level channel widths: base, 2*base, ..., 32*base at 1/32 scale.
pub(crate) fn unet_channels(cfg: &ModelConfig, level: usize) -> usize {
    cfg.base_channels << level
}

fn build_unet(cfg: &ModelConfig, b: &mut Builder) {
    for level in 0..6 {
        let out = unet_channels(cfg, level);
        let inp = if level == 0 { 1 } else { unet_channels(cfg, level - 1) };
        let p = format!("unet.enc{level}");
        b.conv(&format!("{p}.conv1.weight"), &[out, inp, 3, 3]);
        b.zeros(&format!("{p}.conv1.bias"), &[out]);
        b.norm_affine(&format!("{p}.norm1"), out);
        b.conv(&format!("{p}.conv2.weight"), &[out, out, 3, 3]);
        b.zeros(&format!("{p}.conv2.bias"), &[out]);
        b.norm_affine(&format!("{p}.norm2"), out);
    }
}

fn build_fuse(cfg: &ModelConfig, b: &mut Builder) {
    for k in 0..4 {
        let cu = unet_channels(cfg, k + 2);
        let cs = cfg.swin.stage_channels(k);
        b.conv(&format!("fuse.level{k}.weight"), &[cs, cu, 1, 1]);
        b.zeros(&format!("fuse.level{k}.bias"), &[cs]);
    }
}

fn build_gru(cfg: &ModelConfig, b: &mut Builder) {
    let cb = cfg.swin.bottleneck_channels();
    for gate in ["z", "r", "h"] {
        b.conv(&format!("gru.{gate}.weight"), &[cb, 2 * cb, 3, 3]);
        b.zeros(&format!("gru.{gate}.bias"), &[cb]);
    }
}

/// Decoder stage widths: `(input, output)` channels of stage k's upsampling;
/// the skip concatenated after it always matches `output`.
pub(crate) fn decoder_stage(cfg: &ModelConfig, k: usize) -> (usize, usize) {
    let s = &cfg.swin;
    match k {
        0 => (s.stage_channels(3), s.stage_channels(2)),
        1 => (s.stage_channels(2), s.stage_channels(1)),
        2 => (s.stage_channels(1), s.stage_channels(0)),
        3 => (s.stage_channels(0), unet_channels(cfg, 1)),
        4 => (unet_channels(cfg, 1), unet_channels(cfg, 0)),
        _ => unreachable!("five decoder stages"),
    }
}

fn build_decoder(cfg: &ModelConfig, b: &mut Builder) {
    for k in 0..5 {
        let (inp, out) = decoder_stage(cfg, k);
        b.conv(&format!("dec.up{k}.weight"), &[inp, out, 3, 3]);
        b.zeros(&format!("dec.up{k}.bias"), &[out]);
        let p = format!("dec.block{k}");
        b.conv(&format!("{p}.conv1.weight"), &[out, 2 * out, 3, 3]);
        b.zeros(&format!("{p}.conv1.bias"), &[out]);
        b.norm_affine(&format!("{p}.norm1"), out);
        b.conv(&format!("{p}.conv2.weight"), &[out, out, 3, 3]);
        b.zeros(&format!("{p}.conv2.bias"), &[out]);
        b.norm_affine(&format!("{p}.norm2"), out);
    }
    b.conv("dec.head.weight", &[1, cfg.base_channels, 1, 1]);
    b.zeros("dec.head.bias", &[1]);
}

/// One forward pass under construction: owns the tape, binds parameters
/// lazily (as differentiable leaves when training, constants otherwise),
/// and caches gather plans across runs.
pub struct Fwd<'a> {
    pub g: Graph,
    pub plans: &'a mut PlanCache,
    store: &'a ParamStore,
    trainable: bool,
    bound: IndexMap<String, Tid>,
}

impl<'a> Fwd<'a> {
    pub fn new(store: &'a ParamStore, plans: &'a mut PlanCache, trainable: bool) -> Self {
        Fwd { g: Graph::new(), plans, store, trainable, bound: IndexMap::new() }
    }

    /// Tape id of a named parameter, binding it on first use.
    ///
    /// # Panics
    /// Panics on unknown names: parameter wiring is a programming error, not
    /// an input condition.
    pub fn p(&mut self, name: &str) -> Tid {
        if let Some(&t) = self.bound.get(name) {
            return t;
        }
        let value = self
            .store
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from store"))
            .clone();
        let t =
            if self.trainable { self.g.leaf(value) } else { self.g.constant(value) };
        self.bound.insert(name.to_string(), t);
        t
    }

    /// Names and tape ids of every parameter bound so far.
    pub fn bound_params(&self) -> impl Iterator<Item = (&String, Tid)> {
        self.bound.iter().map(|(n, &t)| (n, t))
    }

    /// Gradients of all bound parameters after a backward pass.
    pub fn grads(&self) -> IndexMap<String, Arr> {
        self.bound
            .iter()
            .filter_map(|(n, &t)| self.g.grad(t).map(|g| (n.clone(), g.clone())))
            .collect()
    }
}
