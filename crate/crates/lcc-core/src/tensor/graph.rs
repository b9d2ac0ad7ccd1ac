//! Computation graph: append-only op records plus reverse-mode backward.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernels;
use super::{Tensor, TensorError};

pub type NodeId = usize;

/// Op catalog. Each variant carries its attributes; shape rules live in
/// `kernels`. The set covers exactly what the backbone, the embedding head,
/// and both losses need.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// `[m,k] @ [k,n] -> [m,n]`
    Matmul,
    /// Elementwise; rhs may also be a scalar or a `[last_dim]` row vector.
    Add,
    Sub,
    /// Elementwise, same shapes only.
    MulElem,
    /// Same broadcast forms as `Add`. Caller guards against zero divisors.
    Div,
    /// Multiply by a compile-time constant factor.
    Scale { factor: f64 },
    Concat { axis: usize },
    /// Reductions remove `axis` from the shape.
    Mean { axis: usize },
    /// Ties route the gradient to the lowest index.
    Max { axis: usize },
    Sum { axis: usize },
    Relu,
    /// Natural log. Callers clamp away from zero first; the op itself is only
    /// finite on positive inputs.
    Log,
    /// Temporal convolution over `[B,T,C_in]` (or `[T,C_in]`) with zero
    /// padding chosen so `T' = ceil(T / stride)`.
    Conv1dTemporal {
        stride: usize,
        dilation: usize,
        window: usize,
    },
    /// `softmax(x / temperature)` along `axis`, numerically stabilised.
    Softmax { axis: usize, temperature: f64 },
    /// Cosine similarity along the feature axis. Two `[P,C]`/`[Q,C]` inputs
    /// (axis 1) give the `[P,Q]` pairwise matrix; two `[C]` inputs (axis 0)
    /// give a scalar. Zero-norm slices yield similarity 0 with zero gradient.
    CosineSimilarity { axis: usize },
    /// Mean binary cross entropy of probabilities vs targets; probabilities
    /// are clamped to `[1e-7, 1-1e-7]` before the logs.
    BceMean,
    MseMean,
    /// Gradient is zero outside the open interval `(lo, hi)`.
    Clamp { lo: f64, hi: f64 },
    /// Zero out whole slices along `axis`.
    MaskZero { axis: usize, indices: Vec<usize> },
    Reshape { shape: Vec<usize> },
    Transpose { perm: Vec<usize> },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Matmul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::MulElem => "mul_elementwise",
            Op::Div => "div",
            Op::Scale { .. } => "scale",
            Op::Concat { .. } => "concat",
            Op::Mean { .. } => "mean",
            Op::Max { .. } => "max",
            Op::Sum { .. } => "sum",
            Op::Relu => "relu",
            Op::Log => "log",
            Op::Conv1dTemporal { .. } => "conv1d_temporal",
            Op::Softmax { .. } => "softmax",
            Op::CosineSimilarity { .. } => "cosine_similarity",
            Op::BceMean => "bce_mean",
            Op::MseMean => "mse_mean",
            Op::Clamp { .. } => "clamp",
            Op::MaskZero { .. } => "mask_zero",
            Op::Reshape { .. } => "reshape",
            Op::Transpose { .. } => "transpose",
        }
    }
}

struct Node {
    op: Option<Op>,
    inputs: Vec<NodeId>,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients of a scalar loss, keyed by node id. Every `requires_grad` node
/// gets an entry; nodes the loss never reached get zeros.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id).and_then(|g| g.take())
    }
}

/// Single-writer computation graph. Nodes are appended by `forward`, so input
/// ids always precede output ids and the reverse order is topological.
pub struct Graph {
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
}

impl Graph {
    pub fn new(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Seed-derived state for stochastic choices made while building this
    /// graph (only the drop feature mask draws from it).
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register an input tensor, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, tensor: &Tensor) -> Tensor {
        let id = self.nodes.len();
        let value = tensor.clone().with_node(id);
        self.nodes.push(Node {
            op: None,
            inputs: vec![],
            value: value.clone(),
            requires_grad: tensor.requires_grad(),
        });
        value
    }

    /// Register a constant input (no gradient ever flows into it).
    pub fn constant(&mut self, tensor: &Tensor) -> Tensor {
        self.leaf(&tensor.clone().with_requires_grad(false))
    }

    pub fn node_value(&self, id: NodeId) -> Result<&Tensor, TensorError> {
        self.nodes
            .get(id)
            .map(|n| &n.value)
            .ok_or(TensorError::UnknownNode(id))
    }

    pub fn node_op_name(&self, id: NodeId) -> Option<&'static str> {
        self.nodes.get(id).and_then(|n| n.op.as_ref().map(Op::name))
    }

    /// First node (creation order) whose output contains a non-finite value,
    /// for NaN diagnostics after a bad loss.
    pub fn first_non_finite(&self) -> Option<(NodeId, &'static str)> {
        self.nodes.iter().enumerate().find_map(|(id, n)| {
            if n.value.all_finite() {
                None
            } else {
                Some((id, n.op.as_ref().map_or("leaf", Op::name)))
            }
        })
    }

    /// Apply `op` to graph-registered inputs and append the result.
    /// Deterministic given inputs and attributes.
    pub fn forward(&mut self, op: Op, inputs: &[&Tensor]) -> Result<Tensor, TensorError> {
        let mut ids = Vec::with_capacity(inputs.len());
        for t in inputs {
            let id = t.node().ok_or(TensorError::Detached)?;
            if id >= self.nodes.len() {
                return Err(TensorError::UnknownNode(id));
            }
            ids.push(id);
        }
        let (shape, values) = kernels::forward(&op, inputs)?;
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let id = self.nodes.len();
        let value = Tensor::new(shape, values)
            .expect("kernel produced consistent shape")
            .with_requires_grad(requires_grad)
            .with_node(id);
        self.nodes.push(Node {
            op: Some(op),
            inputs: ids,
            value: value.clone(),
            requires_grad,
        });
        Ok(value)
    }

    /// Gradients of a scalar loss node with respect to every `requires_grad`
    /// node in the graph. Unreached nodes get zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TensorError> {
        let loss_node = self.nodes.get(loss).ok_or(TensorError::UnknownNode(loss))?;
        if loss_node.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: loss_node.value.shape().to_vec(),
            });
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss].requires_grad {
            grads[loss] = Some(vec![1.0]);
        }

        for id in (0..=loss).rev() {
            let node = &self.nodes[id];
            let Some(op) = &node.op else { continue };
            let Some(grad_out) = grads[id].as_ref() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|&i| self.nodes[i].requires_grad)
                .collect();
            let input_grads = kernels::backward(op, &inputs, &node.value, grad_out, &needs)?;
            for (slot, grad) in input_grads.into_iter().enumerate() {
                let Some(grad) = grad else { continue };
                let target = node.inputs[slot];
                match grads[target].as_mut() {
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(grad.iter()) {
                            *a += g;
                        }
                    }
                    None => grads[target] = Some(grad),
                }
            }
        }

        let out = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, node)| {
                if !node.requires_grad {
                    return None;
                }
                let values = grads[id]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                Some(
                    Tensor::new(node.value.shape().to_vec(), values)
                        .expect("gradient shape matches node shape"),
                )
            })
            .collect();
        Ok(Gradients { grads: out })
    }

    // Convenience wrappers; the model code reads much better through these.

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        self.forward(Op::Matmul, &[a, b])
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        self.forward(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        self.forward(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        self.forward(Op::MulElem, &[a, b])
    }

    pub fn div(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        self.forward(Op::Div, &[a, b])
    }

    pub fn scale(&mut self, a: &Tensor, factor: f64) -> Result<Tensor, TensorError> {
        self.forward(Op::Scale { factor }, &[a])
    }

    pub fn concat(&mut self, inputs: &[&Tensor], axis: usize) -> Result<Tensor, TensorError> {
        self.forward(Op::Concat { axis }, inputs)
    }

    pub fn mean(&mut self, a: &Tensor, axis: usize) -> Result<Tensor, TensorError> {
        self.forward(Op::Mean { axis }, &[a])
    }

    pub fn max(&mut self, a: &Tensor, axis: usize) -> Result<Tensor, TensorError> {
        self.forward(Op::Max { axis }, &[a])
    }

    pub fn sum(&mut self, a: &Tensor, axis: usize) -> Result<Tensor, TensorError> {
        self.forward(Op::Sum { axis }, &[a])
    }

    pub fn relu(&mut self, a: &Tensor) -> Result<Tensor, TensorError> {
        self.forward(Op::Relu, &[a])
    }

    pub fn log(&mut self, a: &Tensor) -> Result<Tensor, TensorError> {
        self.forward(Op::Log, &[a])
    }

    pub fn conv1d_temporal(
        &mut self,
        x: &Tensor,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        dilation: usize,
        window: usize,
    ) -> Result<Tensor, TensorError> {
        let op = Op::Conv1dTemporal {
            stride,
            dilation,
            window,
        };
        match bias {
            Some(b) => self.forward(op, &[x, weight, b]),
            None => self.forward(op, &[x, weight]),
        }
    }

    pub fn softmax(
        &mut self,
        a: &Tensor,
        axis: usize,
        temperature: f64,
    ) -> Result<Tensor, TensorError> {
        self.forward(Op::Softmax { axis, temperature }, &[a])
    }

    pub fn cosine_similarity(
        &mut self,
        a: &Tensor,
        b: &Tensor,
        axis: usize,
    ) -> Result<Tensor, TensorError> {
        self.forward(Op::CosineSimilarity { axis }, &[a, b])
    }

    pub fn bce_mean(&mut self, probs: &Tensor, targets: &Tensor) -> Result<Tensor, TensorError> {
        self.forward(Op::BceMean, &[probs, targets])
    }

    pub fn mse_mean(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        self.forward(Op::MseMean, &[a, b])
    }

    pub fn clamp(&mut self, a: &Tensor, lo: f64, hi: f64) -> Result<Tensor, TensorError> {
        self.forward(Op::Clamp { lo, hi }, &[a])
    }

    pub fn mask_zero(
        &mut self,
        a: &Tensor,
        axis: usize,
        indices: &[usize],
    ) -> Result<Tensor, TensorError> {
        self.forward(
            Op::MaskZero {
                axis,
                indices: indices.to_vec(),
            },
            &[a],
        )
    }

    pub fn reshape(&mut self, a: &Tensor, shape: &[usize]) -> Result<Tensor, TensorError> {
        self.forward(
            Op::Reshape {
                shape: shape.to_vec(),
            },
            &[a],
        )
    }

    pub fn transpose(&mut self, a: &Tensor, perm: &[usize]) -> Result<Tensor, TensorError> {
        self.forward(
            Op::Transpose {
                perm: perm.to_vec(),
            },
            &[a],
        )
    }
}
