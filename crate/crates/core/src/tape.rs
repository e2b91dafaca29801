//! Reverse-mode differentiation over an explicit operation tape.
//!
//! Each recorded node keeps its forward value and the handles of its inputs.
//! [`Tape::backward`] walks the nodes in reverse recording order, so every
//! node's adjoint is complete before it is pushed to its inputs, and each
//! node is visited exactly once.

use crate::error::{Error, Result};
use crate::losses::{self, LossKind};
use crate::ops::{self, ConvSpec};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    SoftmaxColumns(Var),
    Conv2d(Var, Var, ConvSpec),
    Deconv2d(Var, Var, ConvSpec),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    Hadamard(Var, Var),
    Concat(Var, Var),
    Upsample(Var),
    Flatten(Var),
    Reshape3d(Var),
    Reshape(Var),
    Loss(Var, LossKind, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not influence the output.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.all_finite(), "non-finite value recorded by {op:?}");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn softmax_columns(&mut self, a: Var) -> Result<Var> {
        let out = ops::softmax_columns(self.value(a))?;
        Ok(self.push(out, Op::SoftmaxColumns(a)))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, spec: ConvSpec) -> Result<Var> {
        let out = ops::conv2d(self.value(x), self.value(k), spec)?;
        Ok(self.push(out, Op::Conv2d(x, k, spec)))
    }

    pub fn deconv2d(&mut self, x: Var, k: Var, spec: ConvSpec) -> Result<Var> {
        let out = ops::deconv2d(self.value(x), self.value(k), spec)?;
        Ok(self.push(out, Op::Deconv2d(x, k, spec)))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let out = ops::add_bias(self.value(x), self.value(b))?;
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = ops::sigmoid(self.value(a));
        self.push(out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = ops::relu(self.value(a));
        self.push(out, Op::Relu(a))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Hadamard(a, b)))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Concat(a, b)))
    }

    pub fn upsample_bilinear(&mut self, a: Var, h: usize, w: usize) -> Result<Var> {
        let out = ops::upsample_bilinear(self.value(a), h, w)?;
        Ok(self.push(out, Op::Upsample(a)))
    }

    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let out = ops::flatten(self.value(a))?;
        Ok(self.push(out, Op::Flatten(a)))
    }

    pub fn reshape3d(&mut self, a: Var, h: usize, w: usize) -> Result<Var> {
        let out = ops::reshape3d(self.value(a), h, w)?;
        Ok(self.push(out, Op::Reshape3d(a)))
    }

    /// Row-major reinterpretation with an equal element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Scalar loss of an `H×W` prediction against a fixed binary mask.
    pub fn loss(&mut self, p: Var, kind: LossKind, gt: &Tensor) -> Result<Var> {
        let value = losses::loss_value(kind, self.value(p), gt)?;
        Ok(self.push(Tensor::scalar(value), Op::Loss(p, kind, gt.clone())))
    }

    /// Backward sweep seeded with 1 at a single-element output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).len() != 1 {
            return Err(Error::shape(format!(
                "backward without a seed needs a scalar output, got {:?}",
                self.value(out).shape()
            )));
        }
        let seed = Tensor::ones(self.value(out).shape());
        self.backward_with(out, seed)
    }

    /// Backward sweep with an explicit upstream gradient for `out`.
    pub fn backward_with(&self, out: Var, seed: Tensor) -> Result<Gradients> {
        self.value(out).expect_same_shape(&seed, "backward seed")?;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed);
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            for (input, contribution) in self.local_backward(node, &g)? {
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contribution)?,
                    slot @ None => *slot = Some(contribution),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn local_backward(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| self.value(v);
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (da, db) = ops::matmul_backward(val(*a), val(*b), g)?;
                vec![(*a, da), (*b, db)]
            }
            Op::Transpose(a) => vec![(*a, g.transpose()?)],
            Op::SoftmaxColumns(a) => vec![(*a, ops::softmax_columns_backward(&node.value, g)?)],
            Op::Conv2d(x, k, spec) => {
                let (dx, dk) = ops::conv2d_backward(val(*x), val(*k), g, *spec)?;
                vec![(*x, dx), (*k, dk)]
            }
            Op::Deconv2d(x, k, spec) => {
                let (dx, dk) = ops::deconv2d_backward(val(*x), val(*k), g, *spec)?;
                vec![(*x, dx), (*k, dk)]
            }
            Op::AddBias(x, b) => {
                let c = val(*b).len();
                vec![(*x, g.clone()), (*b, ops::bias_backward(g, c))]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Scale(a, s) => vec![(*a, g.scale(*s))],
            Op::Sigmoid(a) => vec![(*a, node.value.zip_map(g, |y, d| d * y * (1.0 - y))?)],
            Op::Relu(a) => vec![(*a, val(*a).zip_map(g, |x, d| if x > 0.0 { d } else { 0.0 })?)],
            Op::Hadamard(a, b) => {
                vec![(*a, val(*b).zip_map(g, |y, d| y * d)?), (*b, val(*a).zip_map(g, |x, d| x * d)?)]
            }
            Op::Concat(a, b) => {
                let ca = val(*a).shape()[2];
                let (da, db) = ops::split_channels(g, ca)?;
                vec![(*a, da), (*b, db)]
            }
            Op::Upsample(a) => {
                let (h, w, _) = val(*a).dims3("upsample backward")?;
                vec![(*a, ops::upsample_bilinear_backward(g, h, w)?)]
            }
            Op::Flatten(a) => {
                let (h, w, _) = val(*a).dims3("flatten backward")?;
                vec![(*a, ops::reshape3d(g, h, w)?)]
            }
            Op::Reshape3d(a) => vec![(*a, ops::flatten(g)?)],
            Op::Reshape(a) => vec![(*a, g.reshape(val(*a).shape())?)],
            Op::Loss(p, kind, gt) => {
                let grad = losses::loss_gradient(*kind, val(*p), gt)?;
                vec![(*p, grad.scale(g.item()))]
            }
        })
    }
}
