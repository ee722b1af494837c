//! Reverse-mode differentiation over a recorded operation list.
//!
//! A [`Graph`] is built during one forward pass. Every operation appends a node
//! holding its value and the data its gradient rule needs; nodes are appended
//! after their inputs, so reverse insertion order is a valid topological order.
//! [`Graph::backward`] may run once per graph and fills the `grad` slot of every
//! node that depends on a parameter.

use crate::error::{Error, Result};
use crate::layers::conv::{self, Conv3dSpec, ConvDims};
use crate::layers::{activation, linear, loss};
use crate::pif::PifBranch;
use crate::tensor::{elementwise, ElementwiseOp, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Elementwise { op: ElementwiseOp, a: Var, b: Var },
    ElementwiseScalar { op: ElementwiseOp, a: Var, scalar: f64 },
    Sum(Var),
    Conv3d { input: Var, weight: Var, bias: Var, spec: Conv3dSpec },
    /// `argmax[j]` is the flat input offset that won output `j`.
    MaxPool3d { input: Var, argmax: Vec<usize> },
    Elu(Var),
    Sigmoid(Var),
    /// Per-element scale: 0 for dropped, `1/(1-p)` for kept.
    Dropout { input: Var, mask: Vec<f64> },
    Linear { input: Var, weight: Var, bias: Var },
    Reshape(Var),
    /// Concatenation of `(N, F_i)` inputs along the feature axis.
    Concat(Vec<Var>),
    Crop { input: Var, origin: [usize; 3], extents: [usize; 3] },
    PifBranch(Box<PifBranch>),
    Bce { pred: Var, labels: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
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

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: &Tensor) -> Var {
        let mut value = value.clone();
        value.clear_grad();
        self.push_node(value, Op::Leaf, true)
    }

    /// Leaf without a gradient (inputs, labels).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub(crate) fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = op_inputs(&op).iter().any(|i| self.nodes[i.0].needs_grad);
        self.push_node(value, op, needs_grad)
    }

    fn push_node(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn elementwise(&mut self, op: ElementwiseOp, a: Var, b: Var) -> Result<Var> {
        let out = elementwise(op, self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Elementwise { op, a, b }))
    }

    pub fn elementwise_scalar(&mut self, op: ElementwiseOp, a: Var, scalar: f64) -> Result<Var> {
        let out = elementwise(op, self.value(a), scalar)?;
        Ok(self.push(out, Op::ElementwiseScalar { op, a, scalar }))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        let out = Tensor::scalar(s);
        out.check_finite("sum")?;
        Ok(self.push(out, Op::Sum(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// `(N, ...)` to `(N, prod(...))`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.value(a).shape();
        let n = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(a, vec![n, rest])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]).shape().to_vec();
        if first.len() != 2 {
            return Err(Error::InvalidShape(format!("concat expects (N, F), got {first:?}")));
        }
        let n = first[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[0] != n {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    expected: vec![n, 0],
                    actual: s.to_vec(),
                });
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for row in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[row * w..][..w]);
            }
        }
        let out = Tensor::new(vec![n, total], data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Spatial crop of a `(N, C, D, H, W)` tensor.
    pub fn crop(&mut self, input: Var, origin: [usize; 3], extents: [usize; 3]) -> Result<Var> {
        let out = crop_volume(self.value(input), origin, extents)?;
        Ok(self.push(out, Op::Crop { input, origin, extents }))
    }

    /// Runs reverse-mode differentiation from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::NotScalar(loss_value.shape().to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g_out) = grads[i].take() else {
                continue;
            };
            if self.nodes[i].needs_grad {
                self.propagate(i, &g_out, &mut grads)?;
            }
            grads[i] = Some(g_out);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let (Some(g), true) = (g, node.needs_grad) {
                node.value.set_grad(g)?;
            }
        }
        for node in &self.nodes {
            if let Some(g) = node.value.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("backward"));
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g_out: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let mut sink = GradSink { graph: self, grads };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Elementwise { op, a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                sink.add(*a, |g| {
                    for (j, gj) in g.iter_mut().enumerate() {
                        *gj += g_out[j] * op.partials(av[j], bv[j]).0;
                    }
                });
                sink.add(*b, |g| {
                    for (j, gj) in g.iter_mut().enumerate() {
                        *gj += g_out[j] * op.partials(av[j], bv[j]).1;
                    }
                });
            }
            Op::ElementwiseScalar { op, a, scalar } => {
                let av = self.value(*a).data();
                sink.add(*a, |g| {
                    for (j, gj) in g.iter_mut().enumerate() {
                        *gj += g_out[j] * op.partials(av[j], *scalar).0;
                    }
                });
            }
            Op::Sum(a) => sink.add(*a, |g| g.iter_mut().for_each(|gj| *gj += g_out[0])),
            Op::Conv3d {
                input,
                weight,
                bias,
                spec,
            } => {
                let x = self.value(*input);
                let dims = ConvDims::resolve(x.shape(), spec)?;
                let grads = conv::backward_raw(
                    &dims,
                    x.data(),
                    self.value(*weight).data(),
                    g_out,
                    self.needs_grad(*input),
                );
                if let Some(gi) = grads.input {
                    sink.add_slice(*input, &gi);
                }
                sink.add_slice(*weight, &grads.weight);
                sink.add_slice(*bias, &grads.bias);
            }
            Op::MaxPool3d { input, argmax } => sink.add(*input, |g| {
                for (j, &src) in argmax.iter().enumerate() {
                    g[src] += g_out[j];
                }
            }),
            Op::Elu(a) => {
                let av = self.value(*a).data();
                let y = self.nodes[i].value.data();
                sink.add(*a, |g| {
                    for (j, gj) in g.iter_mut().enumerate() {
                        *gj += g_out[j] * activation::elu_derivative(av[j], y[j]);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[i].value.data();
                sink.add(*a, |g| {
                    for (j, gj) in g.iter_mut().enumerate() {
                        *gj += g_out[j] * y[j] * (1.0 - y[j]);
                    }
                });
            }
            Op::Dropout { input, mask } => sink.add(*input, |g| {
                for (j, gj) in g.iter_mut().enumerate() {
                    *gj += g_out[j] * mask[j];
                }
            }),
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let grads = linear::backward_raw(x, w, g_out, self.needs_grad(*input));
                if let Some(gi) = grads.input {
                    sink.add_slice(*input, &gi);
                }
                sink.add_slice(*weight, &grads.weight);
                sink.add_slice(*bias, &grads.bias);
            }
            Op::Reshape(a) => sink.add_slice(*a, g_out),
            Op::Concat(parts) => {
                let n = self.nodes[i].value.shape()[0];
                let total = self.nodes[i].value.shape()[1];
                let mut col = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    sink.add(p, |g| {
                        for row in 0..n {
                            for f in 0..w {
                                g[row * w + f] += g_out[row * total + col + f];
                            }
                        }
                    });
                    col += w;
                }
            }
            Op::Crop {
                input,
                origin,
                extents,
            } => {
                let shape = self.value(*input).shape().to_vec();
                sink.add(*input, |g| uncrop_add(g, &shape, *origin, *extents, g_out));
            }
            Op::PifBranch(branch) => branch.backward(self, g_out, &mut sink)?,
            Op::Bce { pred, labels } => {
                let p = self.value(*pred).data();
                sink.add(*pred, |g| {
                    for (j, gj) in g.iter_mut().enumerate() {
                        *gj += g_out[0] * loss::bce_derivative(p[j], labels[j], labels.len());
                    }
                });
            }
        }
        Ok(())
    }
}

/// Accumulates input gradients during [`Graph::backward`].
pub(crate) struct GradSink<'a> {
    graph: &'a Graph,
    grads: &'a mut [Option<Vec<f64>>],
}

impl GradSink<'_> {
    pub fn add(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.graph.needs_grad(v) {
            return;
        }
        let len = self.graph.value(v).numel();
        let g = self.grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(g);
    }

    pub fn add_slice(&mut self, v: Var, contribution: &[f64]) {
        self.add(v, |g| {
            for (gj, c) in g.iter_mut().zip(contribution) {
                *gj += c;
            }
        });
    }
}

fn op_inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Elementwise { a, b, .. } => vec![*a, *b],
        Op::ElementwiseScalar { a, .. }
        | Op::Sum(a)
        | Op::Elu(a)
        | Op::Sigmoid(a)
        | Op::Reshape(a) => vec![*a],
        Op::Conv3d {
            input,
            weight,
            bias,
            ..
        }
        | Op::Linear {
            input,
            weight,
            bias,
        } => vec![*input, *weight, *bias],
        Op::MaxPool3d { input, .. } | Op::Dropout { input, .. } | Op::Crop { input, .. } => {
            vec![*input]
        }
        Op::Concat(parts) => parts.clone(),
        Op::PifBranch(b) => b.inputs(),
        Op::Bce { pred, .. } => vec![*pred],
    }
}

fn volume_dims(shape: &[usize]) -> Result<(usize, [usize; 3])> {
    if shape.len() != 5 {
        return Err(Error::InvalidShape(format!(
            "expected (N, C, D, H, W), got {shape:?}"
        )));
    }
    Ok((shape[0] * shape[1], [shape[2], shape[3], shape[4]]))
}

pub(crate) fn crop_volume(t: &Tensor, origin: [usize; 3], extents: [usize; 3]) -> Result<Tensor> {
    let (planes, full) = volume_dims(t.shape())?;
    for a in 0..3 {
        if extents[a] == 0 || origin[a] + extents[a] > full[a] {
            return Err(Error::InvalidShape(format!(
                "crop origin {origin:?} extents {extents:?} exceeds {full:?}"
            )));
        }
    }
    let [ed, eh, ew] = extents;
    let mut out = Vec::with_capacity(planes * ed * eh * ew);
    let plane_len = full.iter().product::<usize>();
    for p in 0..planes {
        let plane = &t.data()[p * plane_len..][..plane_len];
        for z in 0..ed {
            for y in 0..eh {
                let start = ((origin[0] + z) * full[1] + origin[1] + y) * full[2] + origin[2];
                out.extend_from_slice(&plane[start..start + ew]);
            }
        }
    }
    let shape = t.shape();
    Tensor::new(vec![shape[0], shape[1], ed, eh, ew], out)
}

pub(crate) fn uncrop_add(
    g: &mut [f64],
    full_shape: &[usize],
    origin: [usize; 3],
    extents: [usize; 3],
    block: &[f64],
) {
    let planes = full_shape[0] * full_shape[1];
    let full = [full_shape[2], full_shape[3], full_shape[4]];
    let plane_len = full.iter().product::<usize>();
    let [ed, eh, ew] = extents;
    let mut k = 0;
    for p in 0..planes {
        for z in 0..ed {
            for y in 0..eh {
                let start =
                    p * plane_len + ((origin[0] + z) * full[1] + origin[1] + y) * full[2] + origin[2];
                for (dst, src) in g[start..start + ew].iter_mut().zip(&block[k..k + ew]) {
                    *dst += src;
                }
                k += ew;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_gradient() {
        let mut g = Graph::new();
        let w = g.param(&Tensor::scalar(0.7));
        let x = g.constant(Tensor::scalar(3.0));
        let y = g.elementwise(ElementwiseOp::Mul, w, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[3.0]);
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn quadratic_gradient() {
        let mut g = Graph::new();
        let w = g.param(&Tensor::from_vec(vec![1.0, -2.0]));
        let sq = g.elementwise(ElementwiseOp::Mul, w, w).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[2.0, -4.0]);
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut g = Graph::new();
        let w = g.param(&Tensor::scalar(1.0));
        let loss = g.elementwise_scalar(ElementwiseOp::Mul, w, 2.0).unwrap();
        g.backward(loss).unwrap();
        assert!(matches!(g.backward(loss), Err(Error::GraphConsumed)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let w = g.param(&Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(g.backward(w), Err(Error::NotScalar(_))));
    }

    #[test]
    fn crop_backward_scatters() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::full(&[1, 1, 3, 3, 3], 1.0));
        let c = g.crop(x, [1, 1, 1], [2, 2, 2]).unwrap();
        let loss = g.sum(c).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(x).unwrap();
        assert_eq!(grad.iter().sum::<f64>(), 8.0);
        assert_eq!(grad[0], 0.0);
        assert_eq!(grad[26], 1.0);
    }
}
