//! The tape: node storage, forward value access, reverse pass.

use ndarray::ArrayD;

/// Dynamic-rank `f64` tensor, the only value type on the tape.
pub type Arr = ArrayD<f64>;

/// Handle to a node in a [`Graph`]. Only valid for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tid(pub(crate) usize);

/// One recorded operation. `backward` receives the forward values of all
/// nodes, this node's own output, and the incoming gradient; it emits one
/// full-shaped gradient contribution per parent through `sink`.
pub(crate) trait OpNode {
    fn backward(&self, values: &[Arr], out: &Arr, grad: &Arr, sink: &mut dyn FnMut(usize, Arr));

    fn is_leaf(&self) -> bool {
        false
    }
}

struct LeafOp;

impl OpNode for LeafOp {
    fn backward(&self, _: &[Arr], _: &Arr, _: &Arr, _: &mut dyn FnMut(usize, Arr)) {}

    fn is_leaf(&self) -> bool {
        true
    }
}

/// Constant input: participates in the forward pass, never receives a gradient.
struct ConstOp;

impl OpNode for ConstOp {
    fn backward(&self, _: &[Arr], _: &Arr, _: &Arr, _: &mut dyn FnMut(usize, Arr)) {}
}

/// Tape of tensor operations. Nodes are appended in execution order, so the
/// vector itself is a topological order of the dataflow graph.
pub struct Graph {
    values: Vec<Arr>,
    grads: Vec<Option<Arr>>,
    ops: Vec<Box<dyn OpNode>>,
    /// Whether the node (or any ancestor) is a differentiable leaf.
    needs: Vec<bool>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { values: Vec::new(), grads: Vec::new(), ops: Vec::new(), needs: Vec::new() }
    }

    /// Number of nodes currently on the tape.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Differentiable input; `backward` will leave its gradient in [`Graph::grad`].
    pub fn leaf(&mut self, value: Arr) -> Tid {
        self.push(value, true, Box::new(LeafOp))
    }

    /// Non-differentiable input (data, targets, masks).
    pub fn constant(&mut self, value: Arr) -> Tid {
        self.push(value, false, Box::new(ConstOp))
    }

    /// Forward value of a node.
    pub fn value(&self, t: Tid) -> &Arr {
        &self.values[t.0]
    }

    /// Gradient accumulated into a leaf by the latest [`Graph::backward`] call.
    /// `None` for non-leaves and for leaves the output does not depend on.
    pub fn grad(&self, t: Tid) -> Option<&Arr> {
        self.grads[t.0].as_ref()
    }

    pub(crate) fn push(&mut self, value: Arr, needs: bool, op: Box<dyn OpNode>) -> Tid {
        debug_assert!(value.is_standard_layout(), "tape values must be standard layout");
        self.values.push(value);
        self.grads.push(None);
        self.ops.push(op);
        self.needs.push(needs);
        Tid(self.values.len() - 1)
    }

    pub(crate) fn needs_grad(&self, t: Tid) -> bool {
        self.needs[t.0]
    }

    /// Reverse pass from a scalar node (shape `[1]`). Clears previous
    /// gradients, seeds the output with 1, and propagates down the tape.
    /// Gradients of intermediate nodes are dropped as soon as they have been
    /// consumed; only leaves keep theirs.
    ///
    /// # Panics
    /// Panics if `output` is not a single-element tensor.
    pub fn backward(&mut self, output: Tid) {
        assert_eq!(self.values[output.0].len(), 1, "backward needs a scalar output");
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[output.0] = Some(Arr::ones(self.values[output.0].raw_dim()));

        for i in (0..=output.0).rev() {
            if !self.needs[i] {
                self.grads[i] = None;
                continue;
            }
            let grad = match if self.ops[i].is_leaf() { self.grads[i].clone() } else { self.grads[i].take() } {
                Some(g) => g,
                None => continue,
            };
            let head = &mut self.grads[..i];
            let values = &self.values;
            let needs = &self.needs;
            self.ops[i].backward(values, &values[i], &grad, &mut |parent, contrib| {
                debug_assert!(parent < i, "op parents must precede the op on the tape");
                if !needs[parent] {
                    return;
                }
                debug_assert_eq!(contrib.shape(), values[parent].shape());
                match &mut head[parent] {
                    Some(acc) => *acc += &contrib,
                    slot @ None => *slot = Some(contrib),
                }
            });
        }
    }
}
