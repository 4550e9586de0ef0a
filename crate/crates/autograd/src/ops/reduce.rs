//! Reductions and the fused binary cross-entropy head.

use ndarray::IxDyn;

use crate::graph::{Arr, Graph, OpNode, Tid};

struct MeanAllOp {
    x: usize,
}

impl OpNode for MeanAllOp {
    fn backward(&self, values: &[Arr], _out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        let n = values[self.x].len() as f64;
        let g = grad[[0]] / n;
        sink(self.x, Arr::from_elem(values[self.x].raw_dim(), g));
    }
}

struct SumAllOp {
    x: usize,
}

impl OpNode for SumAllOp {
    fn backward(&self, values: &[Arr], _out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        sink(self.x, Arr::from_elem(values[self.x].raw_dim(), grad[[0]]));
    }
}

/// Mean of `max(x, 0) - x*y + ln(1 + exp(-|x|))` over all elements; the
/// stable form of `-[y ln s(x) + (1-y) ln(1 - s(x))]`. Backward is exactly
/// `(s(x) - y) / n`, so the logit gradient is the sigmoid residual.
struct BceWithLogitsOp {
    x: usize,
    y: usize,
}

impl OpNode for BceWithLogitsOp {
    fn backward(&self, values: &[Arr], _out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        let x = &values[self.x];
        let y = &values[self.y];
        let scale = grad[[0]] / x.len() as f64;
        let mut dx = x.to_owned();
        dx.zip_mut_with(y, |v, &t| {
            let s = if *v >= 0.0 { 1.0 / (1.0 + (-*v).exp()) } else { let e = v.exp(); e / (1.0 + e) };
            *v = (s - t) * scale;
        });
        sink(self.x, dx);
    }
}

impl Graph {
    /// Mean over all elements; result has shape `[1]`.
    pub fn mean_all(&mut self, x: Tid) -> Tid {
        let v = self.value(x);
        let out = Arr::from_elem(IxDyn(&[1]), v.sum() / v.len() as f64);
        let needs = self.needs_grad(x);
        self.push(out, needs, Box::new(MeanAllOp { x: x.0 }))
    }

    /// Sum over all elements; result has shape `[1]`.
    pub fn sum_all(&mut self, x: Tid) -> Tid {
        let out = Arr::from_elem(IxDyn(&[1]), self.value(x).sum());
        let needs = self.needs_grad(x);
        self.push(out, needs, Box::new(SumAllOp { x: x.0 }))
    }

    /// Numerically stable mean binary cross-entropy on logits. `targets`
    /// must have the same shape as `logits`; it is treated as constant.
    pub fn bce_with_logits(&mut self, logits: Tid, targets: Tid) -> Tid {
        let x = self.value(logits);
        let y = self.value(targets);
        assert_eq!(x.shape(), y.shape(), "logits and targets must share a shape");
        let mut acc = 0.0;
        ndarray::Zip::from(x).and(y).for_each(|&v, &t| {
            acc += v.max(0.0) - v * t + (-v.abs()).exp().ln_1p();
        });
        let out = Arr::from_elem(IxDyn(&[1]), acc / x.len() as f64);
        let needs = self.needs_grad(logits);
        self.push(out, needs, Box::new(BceWithLogitsOp { x: logits.0, y: targets.0 }))
    }
}
