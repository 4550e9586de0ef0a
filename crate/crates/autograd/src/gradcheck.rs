//! Finite-difference gradient verification.
//!
//! [`check`] rebuilds a fresh graph per probe via a user closure, so it
//! exercises exactly the same code path the analytic gradient used. Central
//! differences with a magnitude-scaled step keep the truncation error near
//! `eps^2` for well-conditioned functions.

use crate::graph::{Arr, Graph, Tid};

/// Relative error between an analytic and a numeric derivative:
/// `|a - n| / max(|a|, |n|)`, and `0` when both magnitudes are below `tiny`.
pub fn relative_error(analytic: f64, numeric: f64, tiny: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < tiny {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Worst probe observed by [`check`].
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub probes: usize,
    pub max_rel_err: f64,
    /// `(input index, flat element index)` of the worst probe.
    pub worst: Option<(usize, usize)>,
}

/// Compare analytic gradients of a scalar-valued graph against central
/// differences for every element of every input, or for a caller-chosen
/// subset.
///
/// `build` receives a fresh graph plus leaf ids for `inputs` (in order) and
/// returns the scalar output node. `probes` selects `(input, flat index)`
/// pairs to perturb; pass `None` to sweep every element.
pub fn check(
    build: &dyn Fn(&mut Graph, &[Tid]) -> Tid,
    inputs: &[Arr],
    probes: Option<&[(usize, usize)]>,
    eps: f64,
    tiny: f64,
) -> CheckReport {
    let mut graph = Graph::new();
    let ids: Vec<Tid> = inputs.iter().map(|a| graph.leaf(a.clone())).collect();
    let out = build(&mut graph, &ids);
    assert_eq!(graph.value(out).len(), 1, "gradcheck target must be scalar");
    graph.backward(out);
    let analytic: Vec<Option<Arr>> = ids.iter().map(|&t| graph.grad(t).cloned()).collect();

    let all: Vec<(usize, usize)>;
    let probes = match probes {
        Some(p) => p,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(k, a)| (0..a.len()).map(move |i| (k, i)))
                .collect();
            &all
        }
    };

    let eval = |xs: &[Arr]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<Tid> = xs.iter().map(|a| g.leaf(a.clone())).collect();
        let out = build(&mut g, &ids);
        g.value(out)[[0]]
    };

    let mut report = CheckReport { probes: 0, max_rel_err: 0.0, worst: None };
    let mut work: Vec<Arr> = inputs.to_vec();
    for &(k, i) in probes {
        let base = inputs[k].as_slice().expect("standard layout")[i];
        let step = eps * base.abs().max(1.0);

        work[k].as_slice_mut().expect("standard layout")[i] = base + step;
        let plus = eval(&work);
        work[k].as_slice_mut().expect("standard layout")[i] = base - step;
        let minus = eval(&work);
        work[k].as_slice_mut().expect("standard layout")[i] = base;

        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[k].as_ref().map_or(0.0, |g| g.as_slice().expect("standard layout")[i]);
        let err = relative_error(a, numeric, tiny);
        report.probes += 1;
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = Some((k, i));
        }
    }
    report
}
