//! Softmax and the two normalization layers.

use ndarray::{Axis, IxDyn};

use crate::graph::{Arr, Graph, OpNode, Tid};

struct SoftmaxLastOp {
    x: usize,
}

impl OpNode for SoftmaxLastOp {
    fn backward(&self, _values: &[Arr], out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        let last = Axis(out.ndim() - 1);
        let mut dx = grad.to_owned();
        for (mut drow, srow) in dx.lanes_mut(last).into_iter().zip(out.lanes(last)) {
            let dot: f64 = drow.iter().zip(srow.iter()).map(|(&g, &s)| g * s).sum();
            for (d, &s) in drow.iter_mut().zip(srow.iter()) {
                *d = s * (*d - dot);
            }
        }
        sink(self.x, dx);
    }
}

struct LayerNormLastOp {
    x: usize,
    gamma: usize,
    beta: usize,
    eps: f64,
}

impl OpNode for LayerNormLastOp {
    fn backward(&self, values: &[Arr], _out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        let x = &values[self.x];
        let gamma = values[self.gamma].as_slice().expect("standard layout");
        let last = Axis(x.ndim() - 1);
        let c = x.shape()[x.ndim() - 1] as f64;

        let mut dx = Arr::zeros(x.raw_dim());
        let mut dgamma = vec![0.0; gamma.len()];
        let mut dbeta = vec![0.0; gamma.len()];

        for ((xrow, grow), mut drow) in
            x.lanes(last).into_iter().zip(grad.lanes(last)).zip(dx.lanes_mut(last))
        {
            let mean = xrow.sum() / c;
            let var = xrow.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c;
            let inv_std = 1.0 / (var + self.eps).sqrt();
            // u = dL/dxhat; dx = (u - mean(u) - xhat * mean(u .* xhat)) / std
            let mut mean_u = 0.0;
            let mut mean_ux = 0.0;
            for j in 0..gamma.len() {
                let xhat = (xrow[j] - mean) * inv_std;
                let u = grow[j] * gamma[j];
                mean_u += u;
                mean_ux += u * xhat;
                dgamma[j] += grow[j] * xhat;
                dbeta[j] += grow[j];
            }
            mean_u /= c;
            mean_ux /= c;
            for j in 0..gamma.len() {
                let xhat = (xrow[j] - mean) * inv_std;
                drow[j] = (grow[j] * gamma[j] - mean_u - xhat * mean_ux) * inv_std;
            }
        }
        sink(self.x, dx);
        sink(self.gamma, Arr::from_shape_vec(IxDyn(&[gamma.len()]), dgamma).expect("1-d"));
        sink(self.beta, Arr::from_shape_vec(IxDyn(&[gamma.len()]), dbeta).expect("1-d"));
    }
}

struct GroupNormAllOp {
    x: usize,
    gamma: usize,
    beta: usize,
    eps: f64,
}

impl OpNode for GroupNormAllOp {
    fn backward(&self, values: &[Arr], _out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr)) {
        let x = &values[self.x];
        let gamma = values[self.gamma].as_slice().expect("standard layout");
        let (ch, spatial) = (x.shape()[0], x.len() / x.shape()[0]);
        let n = x.len() as f64;

        let xf = x.as_slice().expect("standard layout");
        let gf = grad.as_slice().expect("standard layout");
        let mean = xf.iter().sum::<f64>() / n;
        let var = xf.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + self.eps).sqrt();

        let mut dgamma = vec![0.0; ch];
        let mut dbeta = vec![0.0; ch];
        let mut mean_u = 0.0;
        let mut mean_ux = 0.0;
        for i in 0..xf.len() {
            let c = i / spatial;
            let xhat = (xf[i] - mean) * inv_std;
            let u = gf[i] * gamma[c];
            mean_u += u;
            mean_ux += u * xhat;
            dgamma[c] += gf[i] * xhat;
            dbeta[c] += gf[i];
        }
        mean_u /= n;
        mean_ux /= n;
        let dx: Vec<f64> = (0..xf.len())
            .map(|i| {
                let c = i / spatial;
                let xhat = (xf[i] - mean) * inv_std;
                (gf[i] * gamma[c] - mean_u - xhat * mean_ux) * inv_std
            })
            .collect();
        sink(self.x, Arr::from_shape_vec(x.raw_dim(), dx).expect("same shape"));
        sink(self.gamma, Arr::from_shape_vec(IxDyn(&[ch]), dgamma).expect("1-d"));
        sink(self.beta, Arr::from_shape_vec(IxDyn(&[ch]), dbeta).expect("1-d"));
    }
}

impl Graph {
    /// Softmax over the last axis, computed with max subtraction per lane.
    pub fn softmax_last(&mut self, x: Tid) -> Tid {
        let mut out = self.value(x).to_owned();
        let last = Axis(out.ndim() - 1);
        for mut row in out.lanes_mut(last) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let needs = self.needs_grad(x);
        self.push(out, needs, Box::new(SoftmaxLastOp { x: x.0 }))
    }

    /// Layer normalization over the last axis with per-feature affine
    /// parameters; variance is the population variance.
    pub fn layer_norm(&mut self, x: Tid, gamma: Tid, beta: Tid, eps: f64) -> Tid {
        let xv = self.value(x);
        let c = xv.shape()[xv.ndim() - 1];
        let gv = self.value(gamma).as_slice().expect("standard layout").to_vec();
        let bv = self.value(beta).as_slice().expect("standard layout").to_vec();
        assert_eq!(gv.len(), c, "gamma length must match the last axis");
        assert_eq!(bv.len(), c, "beta length must match the last axis");

        let mut out = xv.to_owned();
        for mut row in out.lanes_mut(Axis(xv.ndim() - 1)) {
            let mean = row.sum() / c as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv_std * gv[j] + bv[j];
            }
        }
        let needs = self.needs_grad(x) || self.needs_grad(gamma) || self.needs_grad(beta);
        self.push(
            out,
            needs,
            Box::new(LayerNormLastOp { x: x.0, gamma: gamma.0, beta: beta.0, eps }),
        )
    }

    /// Single-group normalization of a `[c, h, w]` map: statistics over the
    /// whole tensor, then a per-channel affine.
    pub fn group_norm(&mut self, x: Tid, gamma: Tid, beta: Tid, eps: f64) -> Tid {
        let xv = self.value(x);
        assert_eq!(xv.ndim(), 3, "group_norm expects [c, h, w]");
        let ch = xv.shape()[0];
        let spatial = xv.len() / ch;
        let gv = self.value(gamma).as_slice().expect("standard layout").to_vec();
        let bv = self.value(beta).as_slice().expect("standard layout").to_vec();
        assert_eq!(gv.len(), ch, "gamma length must match channels");
        assert_eq!(bv.len(), ch, "beta length must match channels");

        let xf = xv.as_slice().expect("standard layout");
        let n = xf.len() as f64;
        let mean = xf.iter().sum::<f64>() / n;
        let var = xf.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + eps).sqrt();
        let data: Vec<f64> = xf
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - mean) * inv_std * gv[i / spatial] + bv[i / spatial])
            .collect();
        let out = Arr::from_shape_vec(xv.raw_dim(), data).expect("same shape");
        let needs = self.needs_grad(x) || self.needs_grad(gamma) || self.needs_grad(beta);
        self.push(
            out,
            needs,
            Box::new(GroupNormAllOp { x: x.0, gamma: gamma.0, beta: beta.0, eps }),
        )
    }
}

#[cfg(test)]
mod tests {
    use ndarray::IxDyn;

    use crate::graph::{Arr, Graph};

    #[test]
    fn softmax_rows_sum_to_one_and_order_is_preserved() {
        let mut g = Graph::new();
        let x = g.leaf(
            Arr::from_shape_vec(IxDyn(&[2, 3]), vec![1.0, 2.0, 3.0, -1e4, 0.0, 1e4]).unwrap(),
        );
        let s = g.softmax_last(x);
        let v = g.value(s);
        for r in 0..2 {
            let sum: f64 = (0..3).map(|c| v[[r, c]]).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert!(v[[0, 2]] > v[[0, 1]] && v[[0, 1]] > v[[0, 0]]);
        assert!(v[[1, 2]] > 0.999); // extreme logits stay finite
    }

    #[test]
    fn layer_norm_standardizes_each_lane() {
        let mut g = Graph::new();
        let x = g.leaf(Arr::from_shape_vec(IxDyn(&[1, 4]), vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let gamma = g.leaf(Arr::ones(IxDyn(&[4])));
        let beta = g.leaf(Arr::zeros(IxDyn(&[4])));
        let y = g.layer_norm(x, gamma, beta, 0.0);
        let v = g.value(y);
        let expect = [-1.3416, -0.4472, 0.4472, 1.3416];
        for j in 0..4 {
            assert!((v[[0, j]] - expect[j]).abs() < 1e-4);
        }
    }

    #[test]
    fn group_norm_whole_map_statistics() {
        let mut g = Graph::new();
        let x = g.leaf(Arr::from_shape_vec(IxDyn(&[2, 1, 2]), vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let gamma = g.leaf(Arr::ones(IxDyn(&[2])));
        let beta = g.leaf(Arr::zeros(IxDyn(&[2])));
        let y = g.group_norm(x, gamma, beta, 0.0);
        let v = g.value(y);
        let expect = [-1.3416, -0.4472, 0.4472, 1.3416];
        for (i, &e) in expect.iter().enumerate() {
            assert!((v.as_slice().unwrap()[i] - e).abs() < 1e-4);
        }
    }
}
