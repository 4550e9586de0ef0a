//! Adam with decoupled weight decay.

use indexmap::IndexMap;
use swintempo_autograd::Arr;

use crate::model::params::ParamStore;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamConfig { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }
}

/// First and second moment estimates, keyed like the parameter store.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub t: u64,
    pub m: IndexMap<String, Arr>,
    pub v: IndexMap<String, Arr>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// One optimizer step over every parameter, in store order. Parameters
    /// without an entry in `grads` are treated as having zero gradient.
    /// After the bias-corrected gradient update, every parameter shrinks
    /// multiplicatively by (1 - lr*wd); the decay is decoupled from the
    /// moment estimates.
    pub fn step(&mut self, params: &mut ParamStore, grads: &IndexMap<String, Arr>, cfg: &AdamConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let shrink = 1.0 - cfg.learning_rate * cfg.weight_decay;
        for (name, p) in params.iter_mut() {
            let m = self.m.entry(name.clone()).or_insert_with(|| Arr::zeros(p.raw_dim()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Arr::zeros(p.raw_dim()));
            match grads.get(name) {
                Some(g) => {
                    m.zip_mut_with(g, |mi, gi| *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi);
                    v.zip_mut_with(g, |vi, gi| *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi);
                }
                None => {
                    m.mapv_inplace(|mi| cfg.beta1 * mi);
                    v.mapv_inplace(|vi| cfg.beta2 * vi);
                }
            }
            ndarray::Zip::from(&mut *p).and(&*m).and(&*v).for_each(|pi, &mi, &vi| {
                let update = (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
                *pi = (*pi - cfg.learning_rate * update) * shrink;
            });
        }
    }
}
