//! Reverse-mode differentiation by operation recording.
//!
//! Every differentiable call on a [`Tape`] evaluates its forward kernel,
//! stores the result as a new node and remembers which nodes it consumed.
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and [`Tape::backward`] is a single reverse sweep.

use super::ops::conv::{self, ConvGeom};
use super::ops::elementwise::Broadcast;
use super::ops::linalg::{self, MatMulGeom};
use super::ops::loss;
use super::ops::norm::{self, NormStats};
use super::ops::pool::{self, PoolGeom};
use super::ops::reduce;
use super::ops::{Binary, Conv2dOptions, PoolKind, PoolWindow, Reduce, Unary};
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    /// A handle that refers to no tape entry; for declaration passes that
    /// only record names and shapes.
    pub(crate) fn placeholder(i: usize) -> Var {
        Var(usize::MAX - i)
    }
}

enum Op<T: Element> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Pool {
        x: Var,
        geom: PoolGeom,
        kind: PoolKind,
        argmax: Vec<usize>,
    },
    Unary {
        x: Var,
        func: Unary,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        stats: NormStats<T>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: (usize, usize, usize),
    },
    MatMul {
        a: Var,
        b: Var,
        geom: MatMulGeom,
    },
    Binary {
        a: Var,
        b: Var,
        op: Binary,
        bc: Broadcast,
    },
    Scale {
        x: Var,
        factor: T,
    },
    AddScalar {
        x: Var,
    },
    Reduce {
        x: Var,
        axis: usize,
        kind: Reduce,
        arg: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Reshape {
        x: Var,
    },
    RelBias {
        table: Var,
        index: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    SumAll {
        x: Var,
    },
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    /// Whether any requires-grad leaf reaches this node.
    needs_grad: bool,
    name: &'static str,
}

/// Gradients of a scalar loss with respect to the tape's requires-grad leaves.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of a leaf, or `None` if the leaf is detached.
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// Ordered record of operations for one forward/backward pass.
pub struct Tape<T: Element> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn add_into<T: Element>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
        None => *slot = Some(g),
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Its gradient is tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
            name: "leaf",
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable input.
    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn data(&self, var: Var) -> &[T] {
        self.nodes[var.0].value.data()
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn check(&self, var: Var) -> Result<()> {
        if var.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::contract(format!("variable {} is not on this tape", var.0)))
        }
    }

    fn push(&mut self, name: &'static str, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        let value = Tensor::new(shape, data)?;
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("{name} produced a NaN or infinite value")));
        }
        let needs_grad = inputs.iter().any(|&v| self.needs(v));
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            name,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, opts: Conv2dOptions) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), b.map(|b| self.shape(b)), opts)?;
        let out = conv::conv2d_forward(&geom, self.data(x), self.data(w), b.map(|b| self.data(b)));
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("conv2d", geom.out_shape().to_vec(), out, Op::Conv2d { x, w, b, geom }, &inputs)
    }

    pub fn pool2d(&mut self, x: Var, kind: PoolKind, window: PoolWindow, stride: usize) -> Result<Var> {
        let geom = PoolGeom::new(self.shape(x), window, stride)?;
        let (out, argmax) = pool::pool2d_forward(&geom, self.data(x), kind);
        let shape = vec![self.shape(x)[0], self.shape(x)[1], geom.ho, geom.wo];
        self.push("pool2d", shape, out, Op::Pool { x, geom, kind, argmax }, &[x])
    }

    pub fn unary(&mut self, x: Var, func: Unary) -> Result<Var> {
        let out = self.data(x).iter().map(|&v| func.apply(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push("pointwise", shape, out, Op::Unary { x, func }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Gelu)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Relu)
    }

    /// Layer normalization across axis 1 with per-channel affine parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, epsilon: f64) -> Result<Var> {
        norm::check_layer_norm(self.shape(x), self.shape(gamma), self.shape(beta), epsilon)?;
        let shape = self.shape(x).to_vec();
        let (xhat, stats) = norm::normalize_channels(&shape, self.data(x), T::lit(epsilon));
        let out = norm::apply_affine(&shape, &xhat, self.data(gamma), self.data(beta));
        self.push(
            "layer_norm",
            shape,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                stats,
            },
            &[x, gamma, beta],
        )
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("softmax axis {axis} out of range for {shape:?}")));
        }
        let out = norm::softmax_forward(&shape, self.data(x), axis);
        self.push("softmax", shape, out, Op::Softmax { x, axis }, &[x])
    }

    /// Affine map over the trailing axis with a `Dout × Din` weight.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let dims = linalg::check_linear(self.shape(x), self.shape(w), b.map(|b| self.shape(b)))?;
        let (rows, din, dout) = dims;
        let out = linalg::linear_forward(rows, din, dout, self.data(x), self.data(w), b.map(|b| self.data(b)));
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = dout;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("linear", shape, out, Op::Linear { x, w, b, dims }, &inputs)
    }

    /// Batched product of rank-3 values, optionally transposing either operand.
    pub fn matmul(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let geom = MatMulGeom::new(self.shape(a), self.shape(b), trans_a, trans_b)?;
        let out = linalg::matmul_forward(&geom, self.data(a), self.data(b));
        self.push("matmul", vec![geom.batch, geom.m, geom.n], out, Op::MatMul { a, b, geom }, &[a, b])
    }

    pub fn binary(&mut self, a: Var, b: Var, op: Binary) -> Result<Var> {
        let bc = Broadcast::new(self.shape(a), self.shape(b))?;
        let out = bc.forward(op, self.data(a), self.data(b));
        let shape = bc.out.clone();
        self.push("binary", shape, out, Op::Binary { a, b, op, bc }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Div)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let factor = T::lit(factor);
        let out = self.data(x).iter().map(|&v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        self.push("scale", shape, out, Op::Scale { x, factor }, &[x])
    }

    pub fn add_scalar(&mut self, x: Var, value: f64) -> Result<Var> {
        let value = T::lit(value);
        let out = self.data(x).iter().map(|&v| v + value).collect();
        let shape = self.shape(x).to_vec();
        self.push("add_scalar", shape, out, Op::AddScalar { x }, &[x])
    }

    /// Sum, mean or max along `axis`, keeping the axis with extent 1.
    pub fn reduce(&mut self, x: Var, axis: usize, kind: Reduce) -> Result<Var> {
        let shape = reduce::reduced_shape(self.shape(x), axis)?;
        let (out, arg) = reduce::reduce_forward(self.shape(x), self.data(x), axis, kind);
        self.push("reduce", shape, out, Op::Reduce { x, axis, kind, arg }, &[x])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let shapes: Vec<&[usize]> = parts.iter().map(|&p| self.shape(p)).collect();
        let shape = reduce::concat_shape(&shapes, axis)?;
        let pairs: Vec<(&[usize], &[T])> = parts.iter().map(|&p| (self.shape(p), self.data(p))).collect();
        let out = reduce::concat_forward(&pairs, axis);
        self.push(
            "concat",
            shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).numel() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(x)
            )));
        }
        let out = self.data(x).to_vec();
        self.push("reshape", shape.to_vec(), out, Op::Reshape { x }, &[x])
    }

    /// Gathers a per-head `heads × (2H−1) × (2W−1)` table into a
    /// `heads × L × L` bias over the `h × w` token grid.
    pub fn relative_bias(&mut self, table: Var, h: usize, w: usize) -> Result<Var> {
        let (heads, th, tw) = loss::check_rel_bias(self.shape(table), h, w)?;
        let index = loss::rel_bias_indices(h, w, th, tw);
        let per_head = th * tw;
        let src = self.data(table);
        let mut out = Vec::with_capacity(heads * index.len());
        for hd in 0..heads {
            out.extend(index.iter().map(|&i| src[hd * per_head + i]));
        }
        let l = h * w;
        self.push("relative_bias", vec![heads, l, l], out, Op::RelBias { table, index }, &[table])
    }

    /// Mean categorical cross-entropy of `N × K` logits against labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = loss::check_logits(self.shape(logits), labels)?;
        let (value, probs) = loss::cross_entropy_forward(n, k, self.data(logits), labels);
        self.push(
            "cross_entropy",
            vec![1],
            vec![value],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let total = self.data(x).iter().copied().sum();
        self.push("sum", vec![1], vec![total], Op::SumAll { x }, &[x])
    }

    /// Back-propagates from a scalar `loss`. Returns the gradient of every
    /// requires-grad leaf and also stores it in the leaf tensor's grad slot;
    /// leaves the loss does not depend on get a zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            for (var, g) in self.local_grads(i, &gy) {
                add_into(&mut grads[var.0], g);
            }
        }
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) && node.needs_grad {
                let g = grads[i].take().unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
                node.value.set_grad(Some(g.clone()))?;
                grads[i] = Some(g);
            } else {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    /// Gradient contributions of node `i` to each of its inputs that needs one.
    fn local_grads(&self, i: usize, gy: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        let mut emit = |var: Var, g: Option<Vec<T>>| {
            if let Some(g) = g {
                out.push((var, g));
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let need = [self.needs(*x), self.needs(*w), b.is_some_and(|b| self.needs(b))];
                let [gx, gw, gb] = conv::conv2d_backward(geom, self.data(*x), self.data(*w), gy, need);
                emit(*x, gx);
                emit(*w, gw);
                if let Some(b) = b {
                    emit(*b, gb);
                }
            }
            Op::Pool { x, geom, kind, argmax } => {
                emit(*x, Some(pool::pool2d_backward(geom, *kind, argmax, gy)));
            }
            Op::Unary { x, func } => {
                let g = self
                    .data(*x)
                    .iter()
                    .zip(node.value.data())
                    .zip(gy)
                    .map(|((&xv, &yv), &g)| g * func.derivative(xv, yv))
                    .collect();
                emit(*x, Some(g));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                stats,
            } => {
                let (gx, gg, gb) = norm::layer_norm_backward(self.shape(*x), xhat, stats, self.data(*gamma), gy);
                emit(*x, self.needs(*x).then_some(gx));
                emit(*gamma, self.needs(*gamma).then_some(gg));
                emit(*beta, self.needs(*beta).then_some(gb));
            }
            Op::Softmax { x, axis } => {
                emit(*x, Some(norm::softmax_backward(node.value.shape(), node.value.data(), gy, *axis)));
            }
            Op::Linear { x, w, b, dims } => {
                let (rows, din, dout) = *dims;
                let need = [self.needs(*x), self.needs(*w), b.is_some_and(|b| self.needs(b))];
                let [gx, gw, gb] = linalg::linear_backward(rows, din, dout, self.data(*x), self.data(*w), gy, need);
                emit(*x, gx);
                emit(*w, gw);
                if let Some(b) = b {
                    emit(*b, gb);
                }
            }
            Op::MatMul { a, b, geom } => {
                let need = [self.needs(*a), self.needs(*b)];
                let [ga, gb] = linalg::matmul_backward(geom, self.data(*a), self.data(*b), gy, need);
                emit(*a, ga);
                emit(*b, gb);
            }
            Op::Binary { a, b, op, bc } => {
                if a == b {
                    let [ga, gb] = bc.backward(*op, self.data(*a), self.data(*b), gy, [true, true]);
                    let mut g = ga.unwrap();
                    g.iter_mut().zip(gb.unwrap()).for_each(|(x, y)| *x = *x + y);
                    emit(*a, Some(g));
                } else {
                    let need = [self.needs(*a), self.needs(*b)];
                    let [ga, gb] = bc.backward(*op, self.data(*a), self.data(*b), gy, need);
                    emit(*a, ga);
                    emit(*b, gb);
                }
            }
            Op::Scale { x, factor } => emit(*x, Some(gy.iter().map(|&g| g * *factor).collect())),
            Op::AddScalar { x } | Op::Reshape { x } => emit(*x, Some(gy.to_vec())),
            Op::Reduce { x, axis, kind, arg } => {
                emit(*x, Some(reduce::reduce_backward(self.shape(*x), *axis, *kind, arg, gy)));
            }
            Op::Concat { parts, axis } => {
                let shapes: Vec<Vec<usize>> = parts.iter().map(|&p| self.shape(p).to_vec()).collect();
                for (&p, g) in parts.iter().zip(reduce::concat_backward(&shapes, *axis, gy)) {
                    if self.needs(p) {
                        emit(p, Some(g));
                    }
                }
            }
            Op::RelBias { table, index } => {
                let per_head = self.value(*table).numel() / (gy.len() / index.len());
                let mut g = vec![T::zero(); self.value(*table).numel()];
                for (hd, chunk) in gy.chunks(index.len()).enumerate() {
                    for (&ix, &gv) in index.iter().zip(chunk) {
                        g[hd * per_head + ix] = g[hd * per_head + ix] + gv;
                    }
                }
                emit(*table, Some(g));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = self.shape(*logits)[1];
                emit(
                    *logits,
                    Some(loss::cross_entropy_backward(labels.len(), k, probs, labels, gy[0])),
                );
            }
            Op::SumAll { x } => emit(*x, Some(vec![gy[0]; self.value(*x).numel()])),
        }
        out
    }

    /// Name of the primitive that produced `var`; useful in diagnostics.
    pub fn op_name(&self, var: Var) -> &'static str {
        self.nodes[var.0].name
    }
}
