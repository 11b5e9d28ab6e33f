//! Dense row-major `f64` tensors and a reverse-mode differentiation tape.
//!
//! A [`Tensor`] is an immutable value. Operations are methods on a [`Tape`]:
//! when at least one input is tracked (a registered parameter or the output
//! of a recorded operation) the tape appends a node holding whatever the
//! backward pass needs; otherwise the operation is computed and nothing is
//! recorded. [`Tape::backward`] then walks the nodes in reverse creation
//! order and returns a [`Gradients`] map.
//!
//! ```
//! use mtlforge::tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let w = tape.param(&Tensor::from_vec(vec![3.0, -2.0]));
//! let sq = tape.mul(&w, &w).unwrap();
//! let loss = tape.sum(&sq);
//! let grads = tape.backward(&loss).unwrap();
//! assert_eq!(grads.get(&w).unwrap(), &[6.0, -4.0]);
//! ```

mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::{grad_check, grad_check_inputs, grad_check_piecewise, GradCheckReport, Probe};
pub use ops::Elementwise;
pub(crate) use ops::{axpy, dot};
pub use tape::{Backward, Gradients, NodeId, Tape};

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f64` in row-major order.
///
/// Cloning is cheap: the buffer is reference counted.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<NodeId>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!("shape {shape:?} holds {n} values, buffer has {}", data.len()),
            ));
        }
        if shape.contains(&0) {
            return Err(Error::invalid("tensor", format!("zero-sized dimension in {shape:?}")));
        }
        Ok(Self::from_parts(shape, data))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data: Arc::new(data),
            node: None,
        }
    }

    /// Rank-1 tensor.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Self::from_parts(vec![data.len()], data)
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Whether gradients flow to this tensor.
    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Untracked copy of the value.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// Same buffer viewed under a different shape; not recorded on any tape.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape.clone(),
                right: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
            node: None,
        })
    }

    /// Mutable access to the values. Copies the buffer if it is shared.
    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality of shape and values.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub(crate) fn shared_data(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    pub(crate) fn with_node(mut self, node: NodeId) -> Tensor {
        self.node = Some(node);
        self
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.shape);
        if self.len() <= 16 {
            s.field("data", &self.data.as_slice());
        }
        s.field("node", &self.node).finish()
    }
}

pub(crate) fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    Ok(())
}
