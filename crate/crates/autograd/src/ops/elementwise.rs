//! Pointwise arithmetic and nonlinearities.

use crate::graph::{Arr, Graph, OpNode, Tid};
use crate::ops::util::{reduce_to_shape, zip_broadcast};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

struct AddOp {
    a: usize,
    b: usize,
}

impl OpNode for AddOp {
    fn backward(&self, values: &[Arr], _out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        sink(self.a, reduce_to_shape(grad, values[self.a].shape()));
        sink(self.b, reduce_to_shape(grad, values[self.b].shape()));
    }
}

struct MulOp {
    a: usize,
    b: usize,
}

impl OpNode for MulOp {
    fn backward(&self, values: &[Arr], _out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        let da = zip_broadcast(grad, &values[self.b], |g, b| g * b);
        let db = zip_broadcast(grad, &values[self.a], |g, a| g * a);
        sink(self.a, reduce_to_shape(&da, values[self.a].shape()));
        sink(self.b, reduce_to_shape(&db, values[self.b].shape()));
    }
}

struct AffineOp {
    x: usize,
    scale: f64,
}

impl OpNode for AffineOp {
    fn backward(&self, _values: &[Arr], _out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        sink(self.x, grad.mapv(|g| g * self.scale));
    }
}

struct ReluOp {
    x: usize,
}

impl OpNode for ReluOp {
    fn backward(&self, values: &[Arr], _out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        let mut dx = grad.to_owned();
        dx.zip_mut_with(&values[self.x], |g, &x| {
            if x <= 0.0 {
                *g = 0.0;
            }
        });
        sink(self.x, dx);
    }
}

/// Gradient comes from the op's own output: sigma' = s(1-s).
struct SigmoidOp {
    x: usize,
}

impl OpNode for SigmoidOp {
    fn backward(&self, _values: &[Arr], out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        let mut dx = grad.to_owned();
        dx.zip_mut_with(out, |g, &s| *g *= s * (1.0 - s));
        sink(self.x, dx);
    }
}

struct TanhOp {
    x: usize,
}

impl OpNode for TanhOp {
    fn backward(&self, _values: &[Arr], out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        let mut dx = grad.to_owned();
        dx.zip_mut_with(out, |g, &t| *g *= 1.0 - t * t);
        sink(self.x, dx);
    }
}

struct GeluOp {
    x: usize,
}

impl OpNode for GeluOp {
    fn backward(&self, values: &[Arr], _out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        let mut dx = grad.to_owned();
        dx.zip_mut_with(&values[self.x], |g, &x| {
            let u = GELU_C * (x + GELU_A * x * x * x);
            let t = u.tanh();
            let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
            *g *= 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        });
        sink(self.x, dx);
    }
}

impl Graph {
    /// Elementwise sum with trailing-axis broadcasting.
    pub fn add(&mut self, a: Tid, b: Tid) -> Tid {
        let out = zip_broadcast(self.value(a), self.value(b), |x, y| x + y);
        let needs = self.needs_grad(a) || self.needs_grad(b);
        self.push(out, needs, Box::new(AddOp { a: a.0, b: b.0 }))
    }

    /// Elementwise product with trailing-axis broadcasting.
    pub fn mul(&mut self, a: Tid, b: Tid) -> Tid {
        let out = zip_broadcast(self.value(a), self.value(b), |x, y| x * y);
        let needs = self.needs_grad(a) || self.needs_grad(b);
        self.push(out, needs, Box::new(MulOp { a: a.0, b: b.0 }))
    }

    /// `scale * x + offset` with scalar constants.
    pub fn affine(&mut self, x: Tid, scale: f64, offset: f64) -> Tid {
        let out = self.value(x).mapv(|v| scale * v + offset);
        let needs = self.needs_grad(x);
        self.push(out, needs, Box::new(AffineOp { x: x.0, scale }))
    }

    pub fn relu(&mut self, x: Tid) -> Tid {
        let out = self.value(x).mapv(|v| v.max(0.0));
        let needs = self.needs_grad(x);
        self.push(out, needs, Box::new(ReluOp { x: x.0 }))
    }

    pub fn sigmoid(&mut self, x: Tid) -> Tid {
        // Split on sign so neither branch exponentiates a large positive value.
        let out = self.value(x).mapv(|v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        });
        let needs = self.needs_grad(x);
        self.push(out, needs, Box::new(SigmoidOp { x: x.0 }))
    }

    pub fn tanh(&mut self, x: Tid) -> Tid {
        let out = self.value(x).mapv(f64::tanh);
        let needs = self.needs_grad(x);
        self.push(out, needs, Box::new(TanhOp { x: x.0 }))
    }

    /// GELU, tanh approximation: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&mut self, x: Tid) -> Tid {
        let out = self
            .value(x)
            .mapv(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()));
        let needs = self.needs_grad(x);
        self.push(out, needs, Box::new(GeluOp { x: x.0 }))
    }
}
