//! Layout ops: reshape, permute, concat, slice, pad, and flat gather.

use ndarray::{Axis, IxDyn, Slice};

use crate::graph::{Arr, Graph, OpNode, Tid};

/// Precomputed flat-index gather: `out.flat[i] = src.flat[idx[i]]`.
///
/// Both tensors are addressed in row-major order. A plan is built once per
/// (shape, parameters) combination and can be reused across graph runs; the
/// backward pass is the matching scatter-add. Duplicate source indices are
/// allowed, missing ones simply receive zero gradient.
#[derive(Debug, Clone)]
pub struct GatherPlan {
    src_shape: Vec<usize>,
    out_shape: Vec<usize>,
    idx: Vec<usize>,
}

impl GatherPlan {
    /// # Panics
    /// Panics if `idx.len()` does not match `out_shape` or any index is out
    /// of bounds for `src_shape`.
    pub fn new(src_shape: Vec<usize>, out_shape: Vec<usize>, idx: Vec<usize>) -> Self {
        let src_len: usize = src_shape.iter().product();
        let out_len: usize = out_shape.iter().product();
        assert_eq!(idx.len(), out_len, "plan index count must fill the output");
        assert!(idx.iter().all(|&i| i < src_len), "gather index out of bounds");
        GatherPlan { src_shape, out_shape, idx }
    }

    /// Plan built from a mapping `out multi-index -> src multi-index`.
    pub fn from_fn(
        src_shape: Vec<usize>,
        out_shape: Vec<usize>,
        mut map: impl FnMut(&[usize]) -> Vec<usize>,
    ) -> Self {
        let out_len: usize = out_shape.iter().product();
        let src_strides = row_major_strides(&src_shape);
        let mut idx = Vec::with_capacity(out_len);
        let mut cursor = vec![0usize; out_shape.len()];
        for _ in 0..out_len {
            let src = map(&cursor);
            assert_eq!(src.len(), src_shape.len(), "mapped index rank mismatch");
            let flat: usize = src
                .iter()
                .zip(&src_strides)
                .zip(&src_shape)
                .map(|((&i, &s), &d)| {
                    assert!(i < d, "mapped index {i} out of bounds for axis of size {d}");
                    i * s
                })
                .sum();
            idx.push(flat);
            increment(&mut cursor, &out_shape);
        }
        GatherPlan { src_shape, out_shape, idx }
    }

    pub fn src_shape(&self) -> &[usize] {
        &self.src_shape
    }

    pub fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }

    /// Apply the plan outside any graph.
    pub fn apply(&self, src: &Arr) -> Arr {
        assert_eq!(src.shape(), &self.src_shape[..], "gather input shape mismatch");
        let flat = src.as_slice().expect("standard layout");
        let data: Vec<f64> = self.idx.iter().map(|&i| flat[i]).collect();
        Arr::from_shape_vec(IxDyn(&self.out_shape), data).expect("planned shape")
    }
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn increment(cursor: &mut [usize], shape: &[usize]) {
    for ax in (0..shape.len()).rev() {
        cursor[ax] += 1;
        if cursor[ax] < shape[ax] {
            return;
        }
        cursor[ax] = 0;
    }
}

struct ReshapeOp {
    x: usize,
}

impl OpNode for ReshapeOp {
    fn backward(&self, values: &[Arr], _out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        let sh = values[self.x].raw_dim();
        sink(self.x, grad.to_owned().into_shape_with_order(sh).expect("same element count"));
    }
}

struct PermuteOp {
    x: usize,
    axes: Vec<usize>,
}

impl OpNode for PermuteOp {
    fn backward(&self, _values: &[Arr], _out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        let mut inverse = vec![0usize; self.axes.len()];
        for (to, &from) in self.axes.iter().enumerate() {
            inverse[from] = to;
        }
        let dx = grad.view().permuted_axes(IxDyn(&inverse)).as_standard_layout().to_owned();
        sink(self.x, dx);
    }
}

struct ConcatOp {
    parts: Vec<usize>,
    axis: usize,
}

impl OpNode for ConcatOp {
    fn backward(&self, values: &[Arr], _out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        let mut start = 0isize;
        for &p in &self.parts {
            let len = values[p].shape()[self.axis] as isize;
            let piece = grad
                .slice_axis(Axis(self.axis), Slice::new(start, Some(start + len), 1))
                .as_standard_layout()
                .to_owned();
            sink(p, piece);
            start += len;
        }
    }
}

struct SliceAxisOp {
    x: usize,
    axis: usize,
    start: usize,
}

impl OpNode for SliceAxisOp {
    fn backward(&self, values: &[Arr], out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        let mut dx = Arr::zeros(values[self.x].raw_dim());
        let len = out.shape()[self.axis];
        dx.slice_axis_mut(
            Axis(self.axis),
            Slice::new(self.start as isize, Some((self.start + len) as isize), 1),
        )
        .assign(grad);
        sink(self.x, dx);
    }
}

struct GatherOp {
    x: usize,
    plan: std::sync::Arc<GatherPlan>,
}

impl OpNode for GatherOp {
    fn backward(&self, _values: &[Arr], _out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        let mut dx = vec![0.0; self.plan.src_shape.iter().product()];
        let gflat = grad.as_slice().expect("standard layout");
        for (o, &src) in self.plan.idx.iter().enumerate() {
            dx[src] += gflat[o];
        }
        sink(self.x, Arr::from_shape_vec(IxDyn(&self.plan.src_shape), dx).expect("planned shape"));
    }
}

struct PadAxesOp {
    x: usize,
    pads: Vec<(usize, usize)>,
}

impl OpNode for PadAxesOp {
    fn backward(&self, values: &[Arr], _out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        let mut view = grad.view();
        for (ax, &(lo, _hi)) in self.pads.iter().enumerate() {
            let len = values[self.x].shape()[ax] as isize;
            view.slice_axis_inplace(Axis(ax), Slice::new(lo as isize, Some(lo as isize + len), 1));
        }
        sink(self.x, view.as_standard_layout().to_owned());
    }
}

impl Graph {
    /// Row-major reshape to `shape` (element count must match).
    pub fn reshape(&mut self, x: Tid, shape: &[usize]) -> Tid {
        let out = self
            .value(x)
            .to_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape must preserve element count");
        let needs = self.needs_grad(x);
        self.push(out, needs, Box::new(ReshapeOp { x: x.0 }))
    }

    /// Axis permutation; the result is materialized in standard layout.
    pub fn permute(&mut self, x: Tid, axes: &[usize]) -> Tid {
        let out = self.value(x).view().permuted_axes(IxDyn(axes)).as_standard_layout().to_owned();
        let needs = self.needs_grad(x);
        self.push(out, needs, Box::new(PermuteOp { x: x.0, axes: axes.to_vec() }))
    }

    /// Concatenate along `axis`.
    pub fn concat(&mut self, parts: &[Tid], axis: usize) -> Tid {
        assert!(!parts.is_empty(), "concat needs at least one part");
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(axis), &views).expect("compatible concat shapes");
        let needs = parts.iter().any(|&p| self.needs_grad(p));
        self.push(
            out.as_standard_layout().to_owned(),
            needs,
            Box::new(ConcatOp { parts: parts.iter().map(|p| p.0).collect(), axis }),
        )
    }

    /// Contiguous range `[start, start+len)` along `axis`.
    pub fn slice_axis(&mut self, x: Tid, axis: usize, start: usize, len: usize) -> Tid {
        let out = self
            .value(x)
            .slice_axis(Axis(axis), Slice::new(start as isize, Some((start + len) as isize), 1))
            .as_standard_layout()
            .to_owned();
        let needs = self.needs_grad(x);
        self.push(out, needs, Box::new(SliceAxisOp { x: x.0, axis, start }))
    }

    /// Apply a [`GatherPlan`]; backward is the matching scatter-add.
    pub fn gather(&mut self, x: Tid, plan: std::sync::Arc<GatherPlan>) -> Tid {
        let out = plan.apply(self.value(x));
        let needs = self.needs_grad(x);
        self.push(out, needs, Box::new(GatherOp { x: x.0, plan }))
    }

    /// Zero-pad with `(before, after)` amounts per axis.
    pub fn pad_axes(&mut self, x: Tid, pads: &[(usize, usize)]) -> Tid {
        let xv = self.value(x);
        assert_eq!(pads.len(), xv.ndim(), "one pad pair per axis");
        let sh: Vec<usize> =
            xv.shape().iter().zip(pads).map(|(&d, &(lo, hi))| d + lo + hi).collect();
        let mut out = Arr::zeros(IxDyn(&sh));
        {
            let mut view = out.view_mut();
            for (ax, &(lo, _)) in pads.iter().enumerate() {
                let len = xv.shape()[ax] as isize;
                view.slice_axis_inplace(Axis(ax), Slice::new(lo as isize, Some(lo as isize + len), 1));
            }
            view.assign(xv);
        }
        let needs = self.needs_grad(x);
        self.push(out, needs, Box::new(PadAxesOp { x: x.0, pads: pads.to_vec() }))
    }
}
