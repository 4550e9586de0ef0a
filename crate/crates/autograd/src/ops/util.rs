//! Shared broadcasting helpers.

use ndarray::{IxDyn, Zip};

use crate::graph::Arr;

/// Broadcast shape of two operands under the usual trailing-alignment rules.
///
/// # Panics
/// Panics if the shapes are incompatible.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let nd = a.len().max(b.len());
    let mut out = vec![0usize; nd];
    for i in 0..nd {
        let da = if i < nd - a.len() { 1 } else { a[i - (nd - a.len())] };
        let db = if i < nd - b.len() { 1 } else { b[i - (nd - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            (x, y) => panic!("cannot broadcast {a:?} with {b:?} ({x} vs {y})"),
        };
    }
    out
}

/// Elementwise combine with broadcasting; output owns standard-layout storage.
pub(crate) fn zip_broadcast(a: &Arr, b: &Arr, f: impl Fn(f64, f64) -> f64) -> Arr {
    let sh = broadcast_shape(a.shape(), b.shape());
    let av = a.broadcast(IxDyn(&sh)).expect("checked broadcast");
    let bv = b.broadcast(IxDyn(&sh)).expect("checked broadcast");
    let mut out = Arr::zeros(IxDyn(&sh));
    Zip::from(&mut out).and(&av).and(&bv).for_each(|o, &x, &y| *o = f(x, y));
    out
}

/// Sum `g` down to `target` shape: the adjoint of broadcasting.
pub(crate) fn reduce_to_shape(g: &Arr, target: &[usize]) -> Arr {
    use ndarray::Axis;
    let mut g = g.to_owned();
    while g.ndim() > target.len() {
        g = g.sum_axis(Axis(0));
    }
    for ax in 0..target.len() {
        if target[ax] == 1 && g.shape()[ax] != 1 {
            g = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    debug_assert_eq!(g.shape(), target);
    g
}
