//! Central-difference verification for every op in the catalog.
//!
//! Each case reads the op through a random constant tensor (`mean(out * r)`)
//! so the incoming gradient varies per element; a plain mean would hide
//! structure for ops like softmax whose rows sum to one.

use std::sync::Arc;

use ndarray::IxDyn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swintempo_autograd::gradcheck::{check, relative_error};
use swintempo_autograd::{Arr, GatherPlan, Graph, Tid};

const TOL: f64 = 1e-6;
const EPS: f64 = 1e-5;
const TINY: f64 = 1e-9;

fn uniform(rng: &mut ChaCha8Rng, sh: &[usize], lo: f64, hi: f64) -> Arr {
    let n: usize = sh.iter().product();
    Arr::from_shape_vec(IxDyn(sh), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, for kinked ops like relu.
fn off_zero(rng: &mut ChaCha8Rng, sh: &[usize]) -> Arr {
    let n: usize = sh.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Arr::from_shape_vec(IxDyn(sh), data).unwrap()
}

/// `mean(f(inputs) * r)` with a fixed random readout tensor.
fn sweep(seed: u64, inputs: &[Arr], f: impl Fn(&mut Graph, &[Tid]) -> Tid + 'static) {
    let build = move |g: &mut Graph, ids: &[Tid]| {
        let out = f(g, ids);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00c0_ffee);
        let r = uniform(&mut rng, g.value(out).shape(), 0.25, 1.75);
        let r = g.constant(r);
        let prod = g.mul(out, r);
        g.mean_all(prod)
    };
    let report = check(&build, inputs, None, EPS, TINY);
    assert!(
        report.max_rel_err < TOL,
        "max rel err {} at {:?} over {} probes",
        report.max_rel_err,
        report.worst,
        report.probes
    );
}

#[test]
fn add_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = uniform(&mut rng, &[2, 3], -1.0, 1.0);
    let b = uniform(&mut rng, &[3], -1.0, 1.0);
    sweep(1, &[a, b], |g, ids| g.add(ids[0], ids[1]));
}

#[test]
fn mul_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = uniform(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let b = uniform(&mut rng, &[3, 1], -1.0, 1.0);
    sweep(2, &[a, b], |g, ids| g.mul(ids[0], ids[1]));
}

#[test]
fn affine_scale_offset() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = uniform(&mut rng, &[7], -2.0, 2.0);
    sweep(3, &[a], |g, ids| g.affine(ids[0], -1.7, 0.3));
}

#[test]
fn relu_off_kink() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = off_zero(&mut rng, &[3, 5]);
    sweep(4, &[a], |g, ids| g.relu(ids[0]));
}

#[test]
fn sigmoid_tanh_gelu() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = uniform(&mut rng, &[4, 3], -2.0, 2.0);
    sweep(5, &[a.clone()], |g, ids| g.sigmoid(ids[0]));
    sweep(6, &[a.clone()], |g, ids| g.tanh(ids[0]));
    sweep(7, &[a], |g, ids| g.gelu(ids[0]));
}

#[test]
fn reshape_then_permute() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = uniform(&mut rng, &[2, 3, 4], -1.0, 1.0);
    sweep(8, &[a], |g, ids| {
        let r = g.reshape(ids[0], &[6, 4]);
        g.permute(r, &[1, 0])
    });
}

#[test]
fn concat_two_parts() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = uniform(&mut rng, &[2, 3], -1.0, 1.0);
    let b = uniform(&mut rng, &[2, 5], -1.0, 1.0);
    sweep(9, &[a, b], |g, ids| g.concat(&[ids[0], ids[1]], 1));
}

#[test]
fn slice_axis_interior() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let a = uniform(&mut rng, &[3, 7], -1.0, 1.0);
    sweep(10, &[a], |g, ids| g.slice_axis(ids[0], 1, 2, 4));
}

#[test]
fn gather_with_duplicates() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = uniform(&mut rng, &[2, 4], -1.0, 1.0);
    // Replicate the 2-channel map to 3 channels: duplicate source reads.
    let plan = Arc::new(GatherPlan::from_fn(vec![2, 4], vec![3, 4], |o| {
        vec![o[0].min(1), o[1]]
    }));
    sweep(11, &[a], move |g, ids| g.gather(ids[0], plan.clone()));
}

#[test]
fn pad_axes_gradient_stops_at_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = uniform(&mut rng, &[2, 3], -1.0, 1.0);
    sweep(12, &[a], |g, ids| g.pad_axes(ids[0], &[(1, 2), (0, 1)]));
}

#[test]
fn matmul_both_sides() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = uniform(&mut rng, &[3, 4], -1.0, 1.0);
    let b = uniform(&mut rng, &[4, 2], -1.0, 1.0);
    sweep(13, &[a, b], |g, ids| g.matmul(ids[0], ids[1]));
}

#[test]
fn bmm_both_sides() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let a = uniform(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let b = uniform(&mut rng, &[2, 4, 2], -1.0, 1.0);
    sweep(14, &[a, b], |g, ids| g.bmm(ids[0], ids[1]));
}

#[test]
fn softmax_last_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let a = uniform(&mut rng, &[2, 5], -2.0, 2.0);
    sweep(15, &[a], |g, ids| g.softmax_last(ids[0]));
}

#[test]
fn layer_norm_all_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = uniform(&mut rng, &[3, 6], -1.0, 1.0);
    let gamma = uniform(&mut rng, &[6], 0.5, 1.5);
    let beta = uniform(&mut rng, &[6], -0.5, 0.5);
    sweep(16, &[x, gamma, beta], |g, ids| g.layer_norm(ids[0], ids[1], ids[2], 1e-5));
}

#[test]
fn group_norm_all_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = uniform(&mut rng, &[3, 4, 5], -1.0, 1.0);
    let gamma = uniform(&mut rng, &[3], 0.5, 1.5);
    let beta = uniform(&mut rng, &[3], -0.5, 0.5);
    sweep(17, &[x, gamma, beta], |g, ids| g.group_norm(ids[0], ids[1], ids[2], 1e-5));
}

#[test]
fn conv2d_stride_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let x = uniform(&mut rng, &[2, 6, 7], -1.0, 1.0);
    let w = uniform(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
    let b = uniform(&mut rng, &[3], -0.2, 0.2);
    sweep(18, &[x, w, b], |g, ids| g.conv2d(ids[0], ids[1], ids[2], 1, 1));
}

#[test]
fn conv2d_stride_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let x = uniform(&mut rng, &[2, 8, 6], -1.0, 1.0);
    let w = uniform(&mut rng, &[2, 2, 3, 3], -0.5, 0.5);
    let b = uniform(&mut rng, &[2], -0.2, 0.2);
    sweep(19, &[x, w, b], |g, ids| g.conv2d(ids[0], ids[1], ids[2], 2, 1));
}

#[test]
fn conv_transpose2d_upsample() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let x = uniform(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let w = uniform(&mut rng, &[2, 3, 3, 3], -0.5, 0.5);
    let b = uniform(&mut rng, &[3], -0.2, 0.2);
    sweep(20, &[x, w, b], |g, ids| g.conv_transpose2d(ids[0], ids[1], ids[2], 2, 1, 1));
}

#[test]
fn maxpool2_routes_to_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = uniform(&mut rng, &[2, 4, 6], -1.0, 1.0);
    sweep(21, &[x], |g, ids| g.maxpool2(ids[0]));
}

#[test]
fn reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = uniform(&mut rng, &[3, 4], -1.0, 1.0);
    sweep(22, &[x.clone()], |g, ids| g.mean_all(ids[0]));
    sweep(23, &[x], |g, ids| g.sum_all(ids[0]));
}

#[test]
fn bce_with_logits_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let x = uniform(&mut rng, &[3, 4], -3.0, 3.0);
    let y = Arr::from_shape_vec(
        IxDyn(&[3, 4]),
        (0..12).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect(),
    )
    .unwrap();
    let yc = y.clone();
    let build = move |g: &mut Graph, ids: &[Tid]| {
        let t = g.constant(yc.clone());
        g.bce_with_logits(ids[0], t)
    };
    let report = check(&build, &[x.clone()], None, EPS, TINY);
    assert!(report.max_rel_err < TOL, "max rel err {}", report.max_rel_err);

    // The analytic logit gradient is exactly (sigmoid(x) - y) / n.
    let mut g = Graph::new();
    let lx = g.leaf(x.clone());
    let t = g.constant(y.clone());
    let loss = g.bce_with_logits(lx, t);
    g.backward(loss);
    let dx = g.grad(lx).unwrap();
    for i in 0..12 {
        let xi = x.as_slice().unwrap()[i];
        let s = 1.0 / (1.0 + (-xi).exp());
        let expect = (s - y.as_slice().unwrap()[i]) / 12.0;
        assert!(relative_error(dx.as_slice().unwrap()[i], expect, 1e-15) < 1e-12);
    }
}

#[test]
fn deep_composition_chains_backward() {
    // conv -> norm -> gelu -> pool -> matmul readout, all in one tape.
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let x = uniform(&mut rng, &[1, 4, 4], -1.0, 1.0);
    let w = uniform(&mut rng, &[2, 1, 3, 3], -0.5, 0.5);
    let b = uniform(&mut rng, &[2], -0.2, 0.2);
    let gamma = uniform(&mut rng, &[2], 0.5, 1.5);
    let beta = uniform(&mut rng, &[2], -0.5, 0.5);
    let proj = uniform(&mut rng, &[8, 3], -0.5, 0.5);
    sweep(25, &[x, w, b, gamma, beta, proj], |g, ids| {
        let c = g.conv2d(ids[0], ids[1], ids[2], 1, 1);
        let n = g.group_norm(c, ids[3], ids[4], 1e-5);
        let a = g.gelu(n);
        let p = g.maxpool2(a);
        let flat = g.reshape(p, &[1, 8]);
        g.matmul(flat, ids[5])
    });
}

#[test]
fn grad_absent_for_unused_leaf() {
    let mut g = Graph::new();
    let a = g.leaf(Arr::ones(IxDyn(&[2])));
    let b = g.leaf(Arr::ones(IxDyn(&[2])));
    let m = g.mean_all(a);
    g.backward(m);
    assert!(g.grad(a).is_some());
    assert!(g.grad(b).is_none());
}

#[test]
fn backward_twice_resets_accumulators() {
    let mut g = Graph::new();
    let a = g.leaf(Arr::from_elem(IxDyn(&[3]), 2.0));
    let s = g.sum_all(a);
    g.backward(s);
    g.backward(s);
    for &v in g.grad(a).unwrap() {
        assert_eq!(v, 1.0);
    }
}
