//! Dense f64 tensors with a recorded computation graph and reverse-mode
//! differentiation.
//!
//! The engine is deliberately small: row-major storage, the op catalog the
//! models in this crate need, and bit-for-bit determinism under a fixed seed.
//! Everything runs on one thread; tensors are immutable after creation and
//! cheap to clone (`Arc`-backed storage), so independent graphs can be
//! evaluated from independent threads if a caller wants to.

mod gradcheck;
mod graph;
mod kernels;
#[cfg(test)]
mod op_tests;

pub use gradcheck::{grad_check, grad_check_fn};
pub use graph::{Gradients, Graph, NodeId, Op};

use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: invalid attribute: {detail}")]
    InvalidAttr { op: &'static str, detail: String },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("node {0} does not belong to this graph")]
    UnknownNode(usize),
    #[error("tensor is not registered in a graph")]
    Detached,
    #[error("{op} has no registered derivative")]
    UnsupportedOp { op: &'static str },
}

/// Dense multi-dimensional array of f64 values in row-major order.
///
/// The empty shape `[]` denotes a scalar (one element). `node` is set when the
/// tensor is the output of (or a leaf registered in) a [`Graph`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Arc<Vec<f64>>,
    requires_grad: bool,
    node: Option<NodeId>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                len: values.len(),
            });
        }
        Ok(Self {
            shape,
            values: Arc::new(values),
            requires_grad: false,
            node: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: Arc::new(vec![0.0; numel]),
            requires_grad: false,
            node: None,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: Arc::new(vec![value; numel]),
            requires_grad: false,
            node: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            values: Arc::new(vec![value]),
            requires_grad: false,
            node: None,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        let values = (0..numel).map(&mut f).collect();
        Self {
            shape: shape.to_vec(),
            values: Arc::new(values),
            requires_grad: false,
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Shared handle to the underlying storage (clone is O(1)).
    pub(crate) fn storage(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.values)
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub(crate) fn with_node(mut self, node: NodeId) -> Self {
        self.node = Some(node);
        self
    }

    /// Detach from any graph: same storage, no node id, no gradient flow.
    pub fn detached(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            values: Arc::clone(&self.values),
            requires_grad: false,
            node: None,
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.values[0]
    }

    /// Row-major strides for this tensor's shape.
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    /// Value at a multi-index. Panics on rank or bounds mismatch.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0usize;
        for (axis, (&i, &d)) in index.iter().zip(self.shape.iter()).enumerate() {
            assert!(i < d, "index {i} out of bounds for axis {axis} (dim {d})");
            flat = flat * d + i;
        }
        self.values[flat]
    }

    /// Copy with one value replaced; used by finite differencing and tests.
    pub fn with_value_at(&self, flat: usize, value: f64) -> Self {
        let mut values = self.values.as_ref().clone();
        values[flat] = value;
        Self {
            shape: self.shape.clone(),
            values: Arc::new(values),
            requires_grad: self.requires_grad,
            node: None,
        }
    }

    /// Mutable access for owners (optimizer updates). Copies if shared.
    pub fn values_mut(&mut self) -> &mut Vec<f64> {
        self.node = None;
        Arc::make_mut(&mut self.values)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.values.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        let err = Tensor::new(vec![2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::LengthMismatch { .. }));
    }

    #[test]
    fn empty_shape_is_scalar() {
        let t = Tensor::scalar(4.25);
        assert_eq!(t.shape(), &[] as &[usize]);
        assert_eq!(t.numel(), 1);
        assert_eq!(t.scalar_value(), 4.25);
    }

    #[test]
    fn at_walks_row_major() {
        let t = Tensor::new(vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(t.at(&[0, 2]), 2.0);
        assert_eq!(t.at(&[1, 0]), 3.0);
        assert_eq!(t.strides(), vec![3, 1]);
    }
}
