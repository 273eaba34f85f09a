//! Tape-based reverse-mode automatic differentiation.
//!
//! Nodes are appended in evaluation order, so a node's parents always have
//! smaller indices and the tape itself is a topological order. `backward`
//! walks it once from the root down to index zero.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MulScalar(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    Exp(usize),
    Sum(usize),
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Tensor,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn get(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.get(v)
    }

    /// A trainable input; receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, "leaf")
    }

    /// A fixed input; gradients stop here.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Constant, "constant")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.get(a).matmul(self.get(b))?;
        self.push(out, Op::MatMul(a.0, b.0), "matmul")
    }

    /// Broadcast-adds a bias vector to every row of a matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = self.get(x).add_row(self.get(bias))?;
        self.push(out, Op::AddRow(x.0, bias.0), "add_row")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.get(a).add(self.get(b))?;
        self.push(out, Op::Add(a.0, b.0), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.get(a).sub(self.get(b))?;
        self.push(out, Op::Sub(a.0, b.0), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.get(a).mul(self.get(b))?;
        self.push(out, Op::Mul(a.0, b.0), "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.get(a).scale(c);
        self.push(out, Op::Scale(a.0, c), "scale")
    }

    /// Tensor `a` times the one-element node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let c = self.get(s).item()?;
        let out = self.get(a).scale(c);
        self.push(out, Op::MulScalar(a.0, s.0), "mul_scalar")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.get(a).relu();
        self.push(out, Op::Relu(a.0), "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.get(a).sigmoid();
        self.push(out, Op::Sigmoid(a.0), "sigmoid")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.get(a).map(libm::exp);
        self.push(out, Op::Exp(a.0), "exp")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.get(a).sum());
        self.push(out, Op::Sum(a.0), "sum")
    }

    /// Mean softmax cross-entropy of `logits` (`B × C`) against `labels`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = tensor::cross_entropy(self.get(logits), labels)?;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: logits.0,
                labels: labels.to_vec(),
                probs,
            },
            "cross_entropy",
        )
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if !self.get(root).is_scalar() {
            return Err(Error::Contract("backward root must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(self.get(root).shape(), 1.0));

        for i in (0..=root.0).rev() {
            let Some(upstream) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(upstream);
                    continue;
                }
                Op::Constant => {}
                Op::MatMul(a, b) => {
                    let da = upstream.matmul(&self.nodes[*b].value.transpose()?)?;
                    let db = self.nodes[*a].value.transpose()?.matmul(&upstream)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::AddRow(x, bias) => {
                    let db = upstream.sum_rows()?;
                    accumulate(&mut grads, *x, upstream)?;
                    accumulate(&mut grads, *bias, db)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, upstream.clone())?;
                    accumulate(&mut grads, *a, upstream)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, upstream.scale(-1.0))?;
                    accumulate(&mut grads, *a, upstream)?;
                }
                Op::Mul(a, b) => {
                    let da = upstream.mul(&self.nodes[*b].value)?;
                    let db = upstream.mul(&self.nodes[*a].value)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, upstream.scale(*c))?,
                Op::MulScalar(a, s) => {
                    let sv = &self.nodes[*s].value;
                    let ds = Tensor::full(sv.shape(), upstream.mul(&self.nodes[*a].value)?.sum());
                    let da = upstream.scale(sv.item()?);
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *s, ds)?;
                }
                Op::Relu(a) => {
                    let d = upstream.zip_with(&self.nodes[*a].value, "relu_grad", |g, x| {
                        if x > 0.0 {
                            g
                        } else {
                            0.0
                        }
                    })?;
                    accumulate(&mut grads, *a, d)?;
                }
                Op::Sigmoid(a) => {
                    let d = upstream.zip_with(&node.value, "sigmoid_grad", |g, s| g * s * (1.0 - s))?;
                    accumulate(&mut grads, *a, d)?;
                }
                Op::Exp(a) => {
                    let d = upstream.mul(&node.value)?;
                    accumulate(&mut grads, *a, d)?;
                }
                Op::Sum(a) => {
                    let g = upstream.item()?;
                    let d = Tensor::full(self.nodes[*a].value.shape(), g);
                    accumulate(&mut grads, *a, d)?;
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let g = upstream.item()?;
                    let b = labels.len();
                    let c = probs.len() / b;
                    let mut d = probs.clone();
                    let scale = g / b as f64;
                    for (i, &label) in labels.iter().enumerate() {
                        let row = &mut d.data_mut()[i * c..(i + 1) * c];
                        row[label] -= 1.0;
                        for v in row.iter_mut() {
                            *v *= scale;
                        }
                    }
                    accumulate(&mut grads, *logits, d)?;
                }
            }
        }

        // Only leaf entries survive the loop; interior gradients were consumed.
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, g: Tensor) -> Result<()> {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Gradients of a scalar root with respect to every leaf of the graph.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `leaf`; zeros when the root does not depend on it.
    pub fn wrt(&self, leaf: Var) -> Tensor {
        match self.grads.get(leaf.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[leaf.0]),
        }
    }
}
