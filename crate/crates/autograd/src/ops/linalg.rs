//! Dense matrix products.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Axis, Ix2, Ix3};

use crate::graph::{Arr, Graph, OpNode, Tid};

fn as2(a: &Arr) -> ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().expect("2-d operand")
}

pub(crate) fn mm(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    general_mat_mul(1.0, &a, &b, 0.0, &mut out);
    out
}

struct MatMulOp {
    a: usize,
    b: usize,
}

impl OpNode for MatMulOp {
    fn backward(&self, values: &[Arr], _out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        let g = as2(grad);
        let a = as2(&values[self.a]);
        let b = as2(&values[self.b]);
        sink(self.a, mm(g, b.t()).into_dyn());
        sink(self.b, mm(a.t(), g).into_dyn());
    }
}

struct BmmOp {
    a: usize,
    b: usize,
}

impl OpNode for BmmOp {
    fn backward(&self, values: &[Arr], _out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        let g = grad.view().into_dimensionality::<Ix3>().expect("3-d grad");
        let a = values[self.a].view().into_dimensionality::<Ix3>().expect("3-d operand");
        let b = values[self.b].view().into_dimensionality::<Ix3>().expect("3-d operand");
        let mut da = ndarray::Array3::zeros(a.raw_dim());
        let mut db = ndarray::Array3::zeros(b.raw_dim());
        for k in 0..a.shape()[0] {
            let gk = g.index_axis(Axis(0), k);
            general_mat_mul(1.0, &gk, &b.index_axis(Axis(0), k).t(), 0.0, &mut da.index_axis_mut(Axis(0), k));
            general_mat_mul(1.0, &a.index_axis(Axis(0), k).t(), &gk, 0.0, &mut db.index_axis_mut(Axis(0), k));
        }
        sink(self.a, da.into_dyn());
        sink(self.b, db.into_dyn());
    }
}

impl Graph {
    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Tid, b: Tid) -> Tid {
        let out = mm(as2(self.value(a)), as2(self.value(b))).into_dyn();
        let needs = self.needs_grad(a) || self.needs_grad(b);
        self.push(out, needs, Box::new(MatMulOp { a: a.0, b: b.0 }))
    }

    /// Batched product over the leading axis: `[p, m, k] x [p, k, n] -> [p, m, n]`.
    pub fn bmm(&mut self, a: Tid, b: Tid) -> Tid {
        let av = self.value(a).view().into_dimensionality::<Ix3>().expect("3-d operand");
        let bv = self.value(b).view().into_dimensionality::<Ix3>().expect("3-d operand");
        assert_eq!(av.shape()[0], bv.shape()[0], "batch sizes must match");
        let mut out = ndarray::Array3::zeros((av.shape()[0], av.shape()[1], bv.shape()[2]));
        for k in 0..av.shape()[0] {
            general_mat_mul(
                1.0,
                &av.index_axis(Axis(0), k),
                &bv.index_axis(Axis(0), k),
                0.0,
                &mut out.index_axis_mut(Axis(0), k),
            );
        }
        let needs = self.needs_grad(a) || self.needs_grad(b);
        self.push(out.into_dyn(), needs, Box::new(BmmOp { a: a.0, b: b.0 }))
    }
}
