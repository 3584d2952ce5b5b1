//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node to the tape, so insertion order is a
//! topological order and [`Graph::backward`] is a single reverse sweep.
//! Parameters enter the tape through [`Graph::param`]; their gradients are
//! summed per parameter when one parameter is read more than once.

use crate::error::{AutodiffError, Result};
use crate::float::Float;
use crate::kernels::{self, CrossEntropyOptions};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Option<Var>, padding: usize, stride: usize },
    Relu(Var),
    Add(Var, Var),
    Scale(Var, T),
    PixelShuffle(Var, usize),
    MaxPool { input: Var, argmax: Vec<u32> },
    Upsample(Var, usize),
    Concat(Var, Var),
    /// Losses keep d(loss)/d(input) from their forward pass.
    Loss { input: Var, grad: Tensor<T> },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, bias, .. } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::Relu(x) | Op::Scale(x, _) | Op::PixelShuffle(x, _) | Op::Upsample(x, _) => vec![*x],
            Op::MaxPool { input, .. } | Op::Loss { input, .. } => vec![*input],
            Op::Add(a, b) | Op::Concat(a, b) => vec![*a, *b],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward sweep.
pub struct Gradients<T> {
    by_node: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.by_node.get(v.0).and_then(Option::as_ref)
    }

    /// Per-parameter gradient, indexed like the store. Parameters that did
    /// not influence the loss get `None`.
    pub fn for_params(&self, store: &ParamStore<T>) -> Vec<Option<Tensor<T>>> {
        let mut out: Vec<Option<Tensor<T>>> = vec![None; store.len()];
        for &(id, var) in &self.params {
            if let Some(g) = self.get(var) {
                match &mut out[id.index()] {
                    Some(acc) => acc.add_assign(g),
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        out
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Free variable whose gradient is tracked.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Reads a parameter from `store` onto the tape.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.leaf(store.get(id).clone());
        self.params.push((id, v));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn take_value(mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(T::zero()))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, padding: usize, stride: usize) -> Result<Var> {
        let out = kernels::conv2d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            padding,
            stride,
        )?;
        Ok(self.push(out, Op::Conv2d { input, weight, bias, padding, stride }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x))
    }

    /// Elementwise sum. `b` may have batch size 1, in which case it is
    /// broadcast over the batch of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let broadcast = Self::batch_broadcast(va.shape(), vb.shape())?;
        let mut out = va.clone();
        let n = vb.numel();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += vb.data()[if broadcast { i % n } else { i }];
        }
        Ok(self.push(out, Op::Add(a, b)))
    }

    fn batch_broadcast(a: &[usize], b: &[usize]) -> Result<bool> {
        if a == b {
            return Ok(false);
        }
        if a.len() == b.len() && !a.is_empty() && b[0] == 1 && a[1..] == b[1..] {
            return Ok(true);
        }
        Err(AutodiffError::Shape(format!("add: {a:?} vs {b:?}")))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let out = kernels::pixel_shuffle(self.value(x), r)?;
        Ok(self.push(out, Op::PixelShuffle(x, r)))
    }

    /// 2x2 max pooling with stride 2.
    pub fn max_pool2d(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = kernels::max_pool2x2(self.value(x))?;
        Ok(self.push(out, Op::MaxPool { input: x, argmax }))
    }

    pub fn upsample_nearest(&mut self, x: Var, r: usize) -> Result<Var> {
        let out = kernels::upsample_nearest(self.value(x), r)?;
        Ok(self.push(out, Op::Upsample(x, r)))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Concat(a, b)))
    }

    pub fn l1_loss(&mut self, pred: Var, target: &Tensor<T>, valid: Option<&[bool]>) -> Result<Var> {
        let (loss, grad) = kernels::l1_loss(self.value(pred), target, valid)?;
        Ok(self.push(Tensor::scalar(loss), Op::Loss { input: pred, grad }))
    }

    pub fn cross_entropy(
        &mut self,
        logits: Var,
        labels: &[u8],
        valid: Option<&[bool]>,
        opts: &CrossEntropyOptions,
    ) -> Result<Var> {
        let (loss, grad) = kernels::cross_entropy(self.value(logits), labels, valid, opts)?;
        Ok(self.push(Tensor::scalar(loss), Op::Loss { input: logits, grad }))
    }

    /// Differentiates the scalar `output` with respect to every node that
    /// requires a gradient.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out_val = self.value(output);
        if out_val.numel() != 1 {
            return Err(AutodiffError::Shape(format!("backward needs a scalar, got {:?}", out_val.shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(out_val.shape(), T::one()));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { by_node: grads, params: self.params.clone() })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        let mut accumulate = |v: Var, contribution: Tensor<T>| match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, padding, stride } => {
                let need = [needs(input), needs(weight), bias.as_ref().is_some_and(needs)];
                let cg = kernels::conv2d_backward(self.value(*input), self.value(*weight), g, *padding, *stride, need)?;
                if let Some(d) = cg.input {
                    accumulate(*input, d);
                }
                if let Some(d) = cg.weight {
                    accumulate(*weight, d);
                }
                if let (Some(b), Some(d)) = (bias, cg.bias) {
                    accumulate(*b, d);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let mut d = g.clone();
                for (dv, &v) in d.data_mut().iter_mut().zip(xv.data()) {
                    if v <= T::zero() {
                        *dv = T::zero();
                    }
                }
                accumulate(*x, d);
            }
            Op::Add(a, b) => {
                if needs(a) {
                    accumulate(*a, g.clone());
                }
                if needs(b) {
                    let bshape = self.value(*b).shape();
                    if bshape == g.shape() {
                        accumulate(*b, g.clone());
                    } else {
                        let n: usize = bshape.iter().product();
                        let mut d = Tensor::zeros(bshape);
                        for (i, &v) in g.data().iter().enumerate() {
                            d.data_mut()[i % n] += v;
                        }
                        accumulate(*b, d);
                    }
                }
            }
            Op::Scale(x, f) => accumulate(*x, g.map(|v| v * *f)),
            Op::PixelShuffle(x, r) => accumulate(*x, kernels::pixel_unshuffle(g, *r)?),
            Op::MaxPool { input, argmax } => {
                let mut d = Tensor::zeros(self.value(*input).shape());
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    d.data_mut()[src as usize] += gv;
                }
                accumulate(*input, d);
            }
            Op::Upsample(x, r) => accumulate(*x, kernels::upsample_nearest_backward(g, *r)?),
            Op::Concat(a, b) => {
                let ca = self.value(*a).shape()[1];
                let (da, db) = kernels::split_channels(g, ca)?;
                if needs(a) {
                    accumulate(*a, da);
                }
                if needs(b) {
                    accumulate(*b, db);
                }
            }
            Op::Loss { input, grad } => {
                let upstream = g.item();
                accumulate(*input, grad.map(|v| v * upstream));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values_and_gradient_mask() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(&[2], vec![-2.0, 3.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 3.0]);
        let ones = Tensor::zeros(&[2]);
        let loss = g.l1_loss(y, &ones, None).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.5]);
    }

    #[test]
    fn add_zero_passes_gradient_to_both() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(&[1, 1, 1, 3], vec![1.0, -2.0, 4.0]).unwrap());
        let z = g.leaf(Tensor::zeros(&[1, 1, 1, 3]));
        let s = g.add(x, z).unwrap();
        assert_eq!(g.value(s), g.value(x));
        let loss = g.l1_loss(s, &Tensor::zeros(&[1, 1, 1, 3]), None).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), grads.get(z).unwrap());
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = |x + x| -> d/dx = 2 sign(x)
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(&[1], vec![0.75]).unwrap());
        let y = g.add(x, x).unwrap();
        let loss = g.l1_loss(y, &Tensor::zeros(&[1]), None).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn broadcast_add_sums_over_batch() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::zeros(&[3, 1, 1, 2]));
        let b = g.leaf(Tensor::new(&[1, 1, 1, 2], vec![1.0, -1.0]).unwrap());
        let s = g.add(a, b).unwrap();
        assert_eq!(g.value(s).data(), &[1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
        let loss = g.l1_loss(s, &Tensor::zeros(&[3, 1, 1, 2]), None).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(b).unwrap().data(), &[0.5, -0.5]);
    }
}
