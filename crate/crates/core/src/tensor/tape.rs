use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded operation.
///
/// `inputs` are the forward values of the node's inputs in call order,
/// `grad` is the gradient flowing into the node's output. Must return one
/// gradient per input, shaped like that input. Entries whose `needs` flag is
/// false are ignored and may be returned as `None`.
pub trait Function: Send + Sync {
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    func: Option<Box<dyn Function>>,
    requires_grad: bool,
    flops: u64,
}

/// Append-only record of a computation.
///
/// Nodes are stored in creation order, which is a valid topological order,
/// so backward is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record a differentiable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(value, Vec::new(), None, true, 0)
    }

    /// Record a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Vec::new(), None, false, 0)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Total floating-point operations recorded so far.
    pub fn flops(&self) -> u64 {
        self.nodes.iter().map(|n| n.flops).sum()
    }

    /// Record the result of an operation.
    pub fn push_op(
        &mut self,
        value: Tensor,
        inputs: &[Var],
        func: Box<dyn Function>,
        flops: u64,
    ) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(value, inputs.to_vec(), Some(func), requires_grad, flops)
    }

    fn push_node(
        &mut self,
        value: Tensor,
        inputs: Vec<Var>,
        func: Option<Box<dyn Function>>,
        requires_grad: bool,
        flops: u64,
    ) -> Var {
        self.nodes.push(Node {
            value,
            inputs,
            func,
            requires_grad,
            flops,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a one-element root, seeded with 1.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = &self.nodes[root.0].value;
        if root_value.numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a one-element root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(root_value.shape().to_vec(), 1.0));
        let mut visited = 0;

        for idx in (0..=root.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            visited += 1;
            let node = &self.nodes[idx];
            if let (Some(func), true) = (&node.func, node.requires_grad) {
                let inputs: Vec<&Tensor> =
                    node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let needs: Vec<bool> = node
                    .inputs
                    .iter()
                    .map(|v| self.nodes[v.0].requires_grad)
                    .collect();
                let input_grads = func.backward(&inputs, &node.value, &grad, &needs);
                debug_assert_eq!(input_grads.len(), node.inputs.len());
                for ((var, g), need) in node.inputs.iter().zip(input_grads).zip(&needs) {
                    let (Some(g), true) = (g, *need) else {
                        continue;
                    };
                    debug_assert_eq!(g.shape(), self.nodes[var.0].value.shape());
                    match &mut grads[var.0] {
                        Some(acc) => {
                            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                                *a += b;
                            }
                        }
                        slot @ None => *slot = Some(g),
                    }
                }
            }
            grads[idx] = Some(grad);
        }

        Ok(Gradients { grads, visited })
    }
}

/// Gradients of a scalar root with respect to every node that reaches it.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visited: usize,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` does not reach the root.
    pub fn get_or_zeros(&self, v: Var, like: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.to_vec()))
    }

    /// Number of nodes processed by the reverse sweep.
    pub fn nodes_visited(&self) -> usize {
        self.visited
    }
}
