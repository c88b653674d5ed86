//! Define-by-run reverse-mode tape.
//!
//! Every forward pass records into a fresh [`Graph`]; nodes are appended in
//! evaluation order, so the node vector is already topologically sorted and
//! backward simply walks it in reverse.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorgrad::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Arguments handed to a node's backward rule.
pub struct BackwardArgs<'a, T> {
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
    /// Whether input `i` needs a gradient; rules may skip work for `false`.
    pub needs: Vec<bool>,
}

pub(crate) type BackwardFn<T> =
    Box<dyn Fn(&BackwardArgs<'_, T>) -> Vec<Option<Tensor<T>>> + Send + Sync>;

struct Node<T> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Tape of recorded operations together with their values.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    /// Bumped by every backward pass; a second pass on the same recording is rejected.
    version: u64,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), version: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, inputs: Vec::new(), backward: None, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never accumulates gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated into a leaf by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Number of trainable leaves recorded so far.
    pub fn trainable_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.requires_grad && n.inputs.is_empty()).count()
    }

    /// Records an operation. The backward closure is dropped when no input
    /// participates in differentiation.
    pub(crate) fn push<F>(&mut self, value: Tensor<T>, inputs: &[Var], backward: F) -> Var
    where
        F: Fn(&BackwardArgs<'_, T>) -> Vec<Option<Tensor<T>>> + Send + Sync + 'static,
    {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        let backward: Option<BackwardFn<T>> =
            if requires_grad { Some(Box::new(backward)) } else { None };
        self.nodes.push(Node {
            value,
            inputs: if requires_grad { inputs.to_vec() } else { Vec::new() },
            backward,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Seeds `d loss = 1` and propagates to every trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.version > 0 {
            return Err(Error::BackwardTwice);
        }
        let shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.version += 1;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(shape, T::one()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if node.inputs.is_empty() {
                if node.requires_grad {
                    if let Some(g) = grads[id].take() {
                        self.nodes[id].grad = Some(g);
                    }
                }
                continue;
            }
            let Some(grad) = grads[id].take() else { continue };
            let Some(rule) = node.backward.as_ref() else { continue };
            let args = BackwardArgs {
                inputs: node.inputs.iter().map(|i| &self.nodes[i.0].value).collect(),
                output: &node.value,
                grad: &grad,
                needs: node.inputs.iter().map(|i| self.nodes[i.0].requires_grad).collect(),
            };
            let input_grads = rule(&args);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (inp, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[inp.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.len(), self.nodes[inp.0].value.len(), "grad shape for node {}", inp.0);
                match &mut grads[inp.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => {
                        let shape = self.nodes[inp.0].value.shape().to_vec();
                        *slot = Some(g.reshape(shape)?);
                    }
                }
            }
        }
        Ok(())
    }
}
