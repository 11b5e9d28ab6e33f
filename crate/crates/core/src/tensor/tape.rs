use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use super::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of a node: the tape it lives on and its position there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: u64,
    index: usize,
}

impl NodeId {
    pub fn index(&self) -> usize {
        self.index
    }
}

/// Vector-Jacobian product of one recorded operation.
pub trait Backward {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input, in input order, each with the input's
    /// element count. Inputs whose `needed` flag is false may get `None`.
    fn backward(&self, grad_out: &[f64], needed: &[bool]) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    inputs: Vec<Option<usize>>,
    len: usize,
    op: Option<Box<dyn Backward>>,
}

/// Append-only record of a forward computation.
///
/// One tape per forward/backward step; drop it after the optimizer update.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register `value` as a leaf that receives a gradient.
    pub fn param(&self, value: &Tensor) -> Tensor {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node {
            inputs: Vec::new(),
            len: value.len(),
            op: None,
        });
        value.detach().with_node(NodeId { tape: self.id, index })
    }

    fn local_index(&self, t: &Tensor) -> Option<usize> {
        match t.node {
            Some(id) if id.tape == self.id => Some(id.index),
            Some(_) => {
                debug_assert!(false, "tensor from a different tape used as input");
                None
            }
            None => None,
        }
    }

    /// Wrap a freshly computed value; records a node only if any input is
    /// tracked on this tape. `make` builds the backward closure lazily so
    /// untracked evaluation saves nothing.
    pub fn record<B, F>(&self, inputs: &[&Tensor], shape: Vec<usize>, data: Vec<f64>, make: F) -> Tensor
    where
        B: Backward + 'static,
        F: FnOnce() -> B,
    {
        let out = Tensor::from_parts(shape, data);
        let idx: Vec<Option<usize>> = inputs.iter().map(|t| self.local_index(t)).collect();
        if idx.iter().all(Option::is_none) {
            return out;
        }
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node {
            inputs: idx,
            len: out.len(),
            op: Some(Box::new(make())),
        });
        out.with_node(NodeId { tape: self.id, index })
    }

    /// Gradients of the scalar `root` with respect to every tracked tensor
    /// it depends on. Contributions from multiple consumers are summed.
    pub fn backward(&self, root: &Tensor) -> Result<Gradients> {
        if root.len() != 1 {
            return Err(Error::RootNotScalar(root.shape().to_vec()));
        }
        let root_idx = match root.node {
            Some(id) if id.tape == self.id => id.index,
            _ => return Err(Error::RootNotOnTape),
        };
        let nodes = self.nodes.borrow();
        let mut pending: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        let mut done: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        pending[root_idx] = Some(vec![1.0]);

        for i in (0..=root_idx).rev() {
            let Some(grad) = pending[i].take() else { continue };
            let node = &nodes[i];
            debug_assert_eq!(grad.len(), node.len);
            if let Some(op) = &node.op {
                let needed: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
                let upstream = op.backward(&grad, &needed);
                debug_assert_eq!(upstream.len(), node.inputs.len(), "{}", op.name());
                for (input, g) in node.inputs.iter().zip(upstream) {
                    let (Some(j), Some(g)) = (input, g) else { continue };
                    debug_assert_eq!(g.len(), nodes[*j].len, "{}", op.name());
                    match &mut pending[*j] {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
            done[i] = Some(grad);
        }
        Ok(Gradients {
            tape: self.id,
            grads: done,
        })
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to `t`; `None` for untracked tensors
    /// and tensors the root does not depend on.
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        let id = t.node?;
        if id.tape != self.tape {
            return None;
        }
        self.grads.get(id.index)?.as_deref()
    }

    /// Gradient as a tensor shaped like `t`.
    pub fn tensor(&self, t: &Tensor) -> Option<Tensor> {
        self.get(t)
            .map(|g| Tensor::from_parts(t.shape().to_vec(), g.to_vec()))
    }

    /// Gradient of `t`, or zeros when the root does not depend on it.
    pub fn or_zeros(&self, t: &Tensor) -> Vec<f64> {
        self.get(t)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; t.len()])
    }
}
