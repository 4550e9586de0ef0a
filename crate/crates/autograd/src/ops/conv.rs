//! 2D convolution, transposed convolution, and max-pooling on `[c, h, w]`
//! maps. Convolutions lower to im2col plus one dense product.

use ndarray::{Array2, ArrayView2, ArrayViewD, IxDyn};

use crate::graph::{Arr, Graph, OpNode, Tid};
use crate::ops::linalg::mm;

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn out_dim(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.pad - self.kh) / self.stride + 1, (w + 2 * self.pad - self.kw) / self.stride + 1)
    }
}

/// Patch matrix of `x = [c, h, w]`: rows index `(c, ky, kx)`, columns index
/// output positions in row-major order. Out-of-bounds taps read zero.
fn im2col(x: &ArrayViewD<'_, f64>, g: ConvGeom) -> Array2<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ho, wo) = g.out_dim(h, w);
    let xf = x.as_slice().expect("standard layout");
    let mut cols = Array2::zeros((c * g.kh * g.kw, ho * wo));
    let cf = cols.as_slice_mut().expect("freshly allocated");
    for ch in 0..c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ch * g.kh + ky) * g.kw + kx;
                let base = row * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cf[base + oy * wo + ox] = xf[(ch * h + iy as usize) * w + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch columns back onto a `[c, h, w]`
/// map. Taps that fell outside the map are dropped.
fn col2im(cols: &ArrayView2<'_, f64>, c: usize, h: usize, w: usize, g: ConvGeom) -> Arr {
    let (ho, wo) = g.out_dim(h, w);
    debug_assert_eq!(cols.shape(), &[c * g.kh * g.kw, ho * wo]);
    let cf = cols.as_slice().expect("standard layout");
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ch * g.kh + ky) * g.kw + kx;
                let base = row * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        out[(ch * h + iy as usize) * w + ix as usize] += cf[base + oy * wo + ox];
                    }
                }
            }
        }
    }
    Arr::from_shape_vec(IxDyn(&[c, h, w]), out).expect("sized above")
}

struct Conv2dOp {
    x: usize,
    w: usize,
    b: usize,
    geom: ConvGeom,
}

impl OpNode for Conv2dOp {
    fn backward(&self, values: &[Arr], out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        let (cout, ho, wo) = (out.shape()[0], out.shape()[1], out.shape()[2]);
        let x = &values[self.x];
        let w = &values[self.w];
        let cin = x.shape()[0];
        let g2 = grad.view().into_shape_with_order((cout, ho * wo)).expect("contiguous grad");

        let db: Vec<f64> = (0..cout).map(|o| g2.row(o).sum()).collect();
        sink(self.b, Arr::from_shape_vec(IxDyn(&[cout]), db).expect("1-d"));

        let cols = im2col(&x.view(), self.geom);
        let dw = mm(g2.view(), cols.t());
        sink(self.w, dw.into_dyn().into_shape_with_order(w.raw_dim()).expect("weight shape"));

        let wmat = w
            .view()
            .into_shape_with_order((cout, cin * self.geom.kh * self.geom.kw))
            .expect("contiguous weight");
        let dcols = mm(wmat.t(), g2.view());
        sink(self.x, col2im(&dcols.view(), cin, x.shape()[1], x.shape()[2], self.geom));
    }
}

struct ConvTranspose2dOp {
    x: usize,
    w: usize,
    b: usize,
    geom: ConvGeom,
}

impl OpNode for ConvTranspose2dOp {
    fn backward(&self, values: &[Arr], out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        let x = &values[self.x];
        let w = &values[self.w];
        let (cin, h, wid) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let cout = out.shape()[0];

        let db: Vec<f64> = (0..cout)
            .map(|o| grad.index_axis(ndarray::Axis(0), o).sum())
            .collect();
        sink(self.b, Arr::from_shape_vec(IxDyn(&[cout]), db).expect("1-d"));

        // Forward was out = col2im(w2^T x2); its adjoint is im2col.
        let dprod = im2col(&grad.view(), self.geom);
        let x2 = x.view().into_shape_with_order((cin, h * wid)).expect("contiguous input");
        let w2 = w
            .view()
            .into_shape_with_order((cin, cout * self.geom.kh * self.geom.kw))
            .expect("contiguous weight");

        let dx = mm(w2.view(), dprod.view());
        sink(self.x, dx.into_dyn().into_shape_with_order(x.raw_dim()).expect("input shape"));

        let dw = mm(x2.view(), dprod.t());
        sink(self.w, dw.into_dyn().into_shape_with_order(w.raw_dim()).expect("weight shape"));
    }
}

struct MaxPool2Op {
    x: usize,
    argmax: Vec<usize>,
}

impl OpNode for MaxPool2Op {
    fn backward(&self, values: &[Arr], _out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        let mut dx = vec![0.0; values[self.x].len()];
        let gf = grad.as_slice().expect("standard layout");
        for (o, &src) in self.argmax.iter().enumerate() {
            dx[src] += gf[o];
        }
        sink(self.x, Arr::from_shape_vec(values[self.x].raw_dim(), dx).expect("same shape"));
    }
}

impl Graph {
    /// 2D convolution: `x = [cin, h, w]`, `w = [cout, cin, kh, kw]`,
    /// `b = [cout]`, square stride and zero padding.
    pub fn conv2d(&mut self, x: Tid, w: Tid, b: Tid, stride: usize, pad: usize) -> Tid {
        let xv = self.value(x);
        let wv = self.value(w);
        assert_eq!(xv.ndim(), 3, "conv2d input must be [c, h, w]");
        assert_eq!(wv.ndim(), 4, "conv2d weight must be [cout, cin, kh, kw]");
        assert_eq!(wv.shape()[1], xv.shape()[0], "channel mismatch");
        let geom = ConvGeom { kh: wv.shape()[2], kw: wv.shape()[3], stride, pad };
        let (cout, cin) = (wv.shape()[0], wv.shape()[1]);
        let (ho, wo) = geom.out_dim(xv.shape()[1], xv.shape()[2]);

        let cols = im2col(&xv.view(), geom);
        let wmat = wv
            .view()
            .into_shape_with_order((cout, cin * geom.kh * geom.kw))
            .expect("contiguous weight");
        let mut out2 = mm(wmat, cols.view());
        let bias = self.value(b).as_slice().expect("standard layout");
        assert_eq!(bias.len(), cout, "bias length must match cout");
        for (o, mut row) in out2.rows_mut().into_iter().enumerate() {
            row += bias[o];
        }
        let out = out2.into_dyn().into_shape_with_order(IxDyn(&[cout, ho, wo])).expect("sized");
        let needs = self.needs_grad(x) || self.needs_grad(w) || self.needs_grad(b);
        self.push(out, needs, Box::new(Conv2dOp { x: x.0, w: w.0, b: b.0, geom }))
    }

    /// Transposed 2D convolution: `x = [cin, h, w]`, `w = [cin, cout, kh, kw]`,
    /// `b = [cout]`. Output size is `(h-1)*stride - 2*pad + kh + out_pad`;
    /// `out_pad` must be smaller than `stride`.
    pub fn conv_transpose2d(
        &mut self,
        x: Tid,
        w: Tid,
        b: Tid,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Tid {
        let xv = self.value(x);
        let wv = self.value(w);
        assert_eq!(xv.ndim(), 3, "conv_transpose2d input must be [c, h, w]");
        assert_eq!(wv.ndim(), 4, "conv_transpose2d weight must be [cin, cout, kh, kw]");
        assert_eq!(wv.shape()[0], xv.shape()[0], "channel mismatch");
        assert!(out_pad < stride, "out_pad must be smaller than stride");
        let geom = ConvGeom { kh: wv.shape()[2], kw: wv.shape()[3], stride, pad };
        let (cin, cout) = (wv.shape()[0], wv.shape()[1]);
        let (h, wid) = (xv.shape()[1], xv.shape()[2]);
        let ho = (h - 1) * stride + geom.kh + out_pad - 2 * pad;
        let wo = (wid - 1) * stride + geom.kw + out_pad - 2 * pad;

        let x2 = xv.view().into_shape_with_order((cin, h * wid)).expect("contiguous input");
        let w2 = wv
            .view()
            .into_shape_with_order((cin, cout * geom.kh * geom.kw))
            .expect("contiguous weight");
        let prod = mm(w2.t(), x2);
        let mut out = col2im(&prod.view(), cout, ho, wo, geom);
        {
            let bias = self.value(b).as_slice().expect("standard layout");
            assert_eq!(bias.len(), cout, "bias length must match cout");
            for (o, mut plane) in out.outer_iter_mut().enumerate() {
                plane += bias[o];
            }
        }
        let needs = self.needs_grad(x) || self.needs_grad(w) || self.needs_grad(b);
        self.push(out, needs, Box::new(ConvTranspose2dOp { x: x.0, w: w.0, b: b.0, geom }))
    }

    /// 2x2 max-pooling with stride 2; both spatial dimensions must be even.
    /// Ties go to the earliest tap in scan order.
    pub fn maxpool2(&mut self, x: Tid) -> Tid {
        let xv = self.value(x);
        assert_eq!(xv.ndim(), 3, "maxpool2 input must be [c, h, w]");
        let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        assert!(h % 2 == 0 && w % 2 == 0, "maxpool2 needs even spatial dims");
        let (ho, wo) = (h / 2, w / 2);
        let xf = xv.as_slice().expect("standard layout");
        let mut data = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for ky in 0..2 {
                        for kx in 0..2 {
                            let i = (ch * h + oy * 2 + ky) * w + ox * 2 + kx;
                            if xf[i] > best {
                                best = xf[i];
                                best_i = i;
                            }
                        }
                    }
                    data.push(best);
                    argmax.push(best_i);
                }
            }
        }
        let out = Arr::from_shape_vec(IxDyn(&[c, ho, wo]), data).expect("sized above");
        let needs = self.needs_grad(x);
        self.push(out, needs, Box::new(MaxPool2Op { x: x.0, argmax }))
    }
}
