//! Dense-tensor reverse-mode automatic differentiation.
//!
//! A [`Tape`] owns every tensor created during a forward pass as a node in
//! execution order, which is by construction a topological order.
//! [`Tensor`] is a lightweight handle (id + shape) into its tape. Calling
//! [`Tape::backward`] on a scalar walks the record once in reverse and
//! accumulates exact gradients into every node that requires them; a tape
//! can be walked backward only once.
//!
//! Ops accumulate in a fixed order, so results are bitwise reproducible
//! run-to-run. Convolution has two forward algorithms (direct loops and an
//! im2col path) that produce identical values because they perform the same
//! multiply-adds in the same order.

mod conv;
mod gradcheck;
mod norm;
mod resize;

pub use conv::ConvAlgo;
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::real::{real, Real};

/// Errors raised while building or differentiating a tape.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("channel counts not divisible by group count")]
    GroupDivisibility,
    #[error("backward requires a scalar loss")]
    NotScalar,
    #[error("tape already walked backward")]
    TapeConsumed,
    #[error("tensor does not belong to this tape")]
    ForeignTensor,
}

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone)]
pub struct Tensor {
    id: usize,
    shape: Vec<usize>,
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub(crate) enum Op<T: Real> {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    /// y = mul * x + add; only `mul` matters for the backward pass.
    ScalarAffine { input: usize, mul: T },
    Relu(usize),
    LeakyRelu { input: usize, slope: T },
    Sigmoid(usize),
    /// y = x.powf(exponent) with a constant exponent.
    PowConst { input: usize, exponent: T },
    Ln(usize),
    Clamp { input: usize, lo: T, hi: T },
    Concat { inputs: Vec<usize>, axis: usize },
    SliceChannels { input: usize, start: usize, end: usize },
    Sum(usize),
    Conv3d {
        input: usize,
        weight: usize,
        bias: Option<usize>,
        stride: [usize; 3],
        padding: [usize; 3],
        groups: usize,
    },
    InstanceNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        /// Saved per-(n, c) statistics for the backward pass.
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Resize3 {
        input: usize,
        out_dhw: [usize; 3],
    },
}

pub(crate) struct Node<T: Real> {
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    pub grad: Option<Vec<T>>,
    pub requires_grad: bool,
    pub op: Op<T>,
}

/// Ordered record of executed primitives plus their values and gradients.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(
        &mut self,
        shape: Vec<usize>,
        values: Vec<T>,
        requires_grad: bool,
        op: Op<T>,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let id = self.nodes.len();
        self.nodes.push(Node { shape: shape.clone(), values, grad: None, requires_grad, op });
        Tensor { id, shape }
    }

    pub(crate) fn node(&self, id: usize) -> &Node<T> {
        &self.nodes[id]
    }

    fn check(&self, t: &Tensor) -> Result<(), AutodiffError> {
        if t.id >= self.nodes.len() || self.nodes[t.id].shape != t.shape {
            return Err(AutodiffError::ForeignTensor);
        }
        Ok(())
    }

    fn requires(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Create a leaf tensor from owned values.
    pub fn leaf(
        &mut self,
        values: Vec<T>,
        shape: &[usize],
        requires_grad: bool,
    ) -> Result<Tensor, AutodiffError> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "leaf values length {} != product of shape {:?}",
                values.len(),
                shape
            )));
        }
        Ok(self.push(shape.to_vec(), values, requires_grad, Op::Leaf))
    }

    /// Leaf copied from a slice.
    pub fn leaf_from(
        &mut self,
        values: &[T],
        shape: &[usize],
        requires_grad: bool,
    ) -> Result<Tensor, AutodiffError> {
        self.leaf(values.to_vec(), shape, requires_grad)
    }

    pub fn value(&self, t: &Tensor) -> &[T] {
        &self.nodes[t.id].values
    }

    pub fn scalar_value(&self, t: &Tensor) -> T {
        debug_assert_eq!(t.numel(), 1);
        self.nodes[t.id].values[0]
    }

    /// Gradient from the backward pass; `None` before backward runs or for
    /// tensors that do not require gradients.
    pub fn grad(&self, t: &Tensor) -> Option<&[T]> {
        self.nodes[t.id].grad.as_deref()
    }

    // ---- elementwise suite --------------------------------------------------

    fn binary_check(&self, a: &Tensor, b: &Tensor, name: &str) -> Result<(), AutodiffError> {
        self.check(a)?;
        self.check(b)?;
        if a.shape != b.shape {
            return Err(AutodiffError::ShapeMismatch(format!(
                "{name}: {:?} vs {:?}",
                a.shape, b.shape
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        self.binary_check(a, b, "add")?;
        let vals: Vec<T> = self.nodes[a.id]
            .values
            .iter()
            .zip(&self.nodes[b.id].values)
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.requires(&[a.id, b.id]);
        Ok(self.push(a.shape.clone(), vals, rg, Op::Add(a.id, b.id)))
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        self.binary_check(a, b, "mul")?;
        let vals: Vec<T> = self.nodes[a.id]
            .values
            .iter()
            .zip(&self.nodes[b.id].values)
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.requires(&[a.id, b.id]);
        Ok(self.push(a.shape.clone(), vals, rg, Op::Mul(a.id, b.id)))
    }

    pub fn div(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        self.binary_check(a, b, "div")?;
        let vals: Vec<T> = self.nodes[a.id]
            .values
            .iter()
            .zip(&self.nodes[b.id].values)
            .map(|(&x, &y)| x / y)
            .collect();
        let rg = self.requires(&[a.id, b.id]);
        Ok(self.push(a.shape.clone(), vals, rg, Op::Div(a.id, b.id)))
    }

    /// y = mul * x + add with constants (no gradient flows through them).
    pub fn scalar_affine(&mut self, a: &Tensor, mul: T, add: T) -> Tensor {
        let vals: Vec<T> = self.nodes[a.id].values.iter().map(|&x| mul * x + add).collect();
        let rg = self.nodes[a.id].requires_grad;
        self.push(a.shape.clone(), vals, rg, Op::ScalarAffine { input: a.id, mul })
    }

    pub fn relu(&mut self, a: &Tensor) -> Tensor {
        let vals: Vec<T> = self.nodes[a.id]
            .values
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let rg = self.nodes[a.id].requires_grad;
        self.push(a.shape.clone(), vals, rg, Op::Relu(a.id))
    }

    pub fn leaky_relu(&mut self, a: &Tensor, slope: T) -> Tensor {
        let vals: Vec<T> = self.nodes[a.id]
            .values
            .iter()
            .map(|&x| if x > T::zero() { x } else { slope * x })
            .collect();
        let rg = self.nodes[a.id].requires_grad;
        self.push(a.shape.clone(), vals, rg, Op::LeakyRelu { input: a.id, slope })
    }

    pub fn sigmoid(&mut self, a: &Tensor) -> Tensor {
        let one = T::one();
        // Branch on sign so exp never overflows at large |x|.
        let vals: Vec<T> = self.nodes[a.id]
            .values
            .iter()
            .map(|&x| {
                if x >= T::zero() {
                    one / (one + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (one + e)
                }
            })
            .collect();
        let rg = self.nodes[a.id].requires_grad;
        self.push(a.shape.clone(), vals, rg, Op::Sigmoid(a.id))
    }

    pub fn pow_const(&mut self, a: &Tensor, exponent: T) -> Tensor {
        let vals: Vec<T> = self.nodes[a.id].values.iter().map(|&x| x.powf(exponent)).collect();
        let rg = self.nodes[a.id].requires_grad;
        self.push(a.shape.clone(), vals, rg, Op::PowConst { input: a.id, exponent })
    }

    pub fn ln(&mut self, a: &Tensor) -> Tensor {
        let vals: Vec<T> = self.nodes[a.id].values.iter().map(|&x| x.ln()).collect();
        let rg = self.nodes[a.id].requires_grad;
        self.push(a.shape.clone(), vals, rg, Op::Ln(a.id))
    }

    pub fn clamp(&mut self, a: &Tensor, lo: T, hi: T) -> Tensor {
        let vals: Vec<T> = self.nodes[a.id]
            .values
            .iter()
            .map(|&x| {
                if x < lo {
                    lo
                } else if x > hi {
                    hi
                } else {
                    x
                }
            })
            .collect();
        let rg = self.nodes[a.id].requires_grad;
        self.push(a.shape.clone(), vals, rg, Op::Clamp { input: a.id, lo, hi })
    }

    /// Concatenate along `axis`; all other extents must match.
    pub fn concat(&mut self, inputs: &[&Tensor], axis: usize) -> Result<Tensor, AutodiffError> {
        if inputs.is_empty() {
            return Err(AutodiffError::ShapeMismatch("concat of zero tensors".into()));
        }
        for t in inputs {
            self.check(t)?;
        }
        let rank = inputs[0].shape.len();
        if axis >= rank {
            return Err(AutodiffError::ShapeMismatch(format!(
                "concat axis {axis} out of range for rank {rank}"
            )));
        }
        let mut out_shape = inputs[0].shape.clone();
        let mut axis_total = 0usize;
        for t in inputs {
            if t.shape.len() != rank {
                return Err(AutodiffError::ShapeMismatch("concat rank mismatch".into()));
            }
            for (d, (&a, &b)) in t.shape.iter().zip(&inputs[0].shape).enumerate() {
                if d != axis && a != b {
                    return Err(AutodiffError::ShapeMismatch(format!(
                        "concat extent mismatch on axis {d}: {a} vs {b}"
                    )));
                }
            }
            axis_total += t.shape[axis];
        }
        out_shape[axis] = axis_total;

        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let mut vals = vec![T::zero(); outer * axis_total * inner];
        let mut offset = 0usize;
        for t in inputs {
            let e = t.shape[axis];
            let src = &self.nodes[t.id].values;
            for o in 0..outer {
                let dst = (o * axis_total + offset) * inner;
                let s = o * e * inner;
                vals[dst..dst + e * inner].copy_from_slice(&src[s..s + e * inner]);
            }
            offset += e;
        }
        let ids: Vec<usize> = inputs.iter().map(|t| t.id).collect();
        let rg = self.requires(&ids);
        Ok(self.push(out_shape, vals, rg, Op::Concat { inputs: ids, axis }))
    }

    /// Slice channels `start..end` of an [N, C, ...] tensor (axis 1).
    pub fn slice_channels(
        &mut self,
        a: &Tensor,
        start: usize,
        end: usize,
    ) -> Result<Tensor, AutodiffError> {
        self.check(a)?;
        if a.shape.len() < 2 || start >= end || end > a.shape[1] {
            return Err(AutodiffError::ShapeMismatch(format!(
                "slice_channels {start}..{end} on shape {:?}",
                a.shape
            )));
        }
        let mut out_shape = a.shape.clone();
        let width = end - start;
        out_shape[1] = width;
        let outer = a.shape[0];
        let c = a.shape[1];
        let inner: usize = a.shape[2..].iter().product();
        let src = &self.nodes[a.id].values;
        let mut vals = vec![T::zero(); outer * width * inner];
        for o in 0..outer {
            let s = (o * c + start) * inner;
            let d = o * width * inner;
            vals[d..d + width * inner].copy_from_slice(&src[s..s + width * inner]);
        }
        let rg = self.nodes[a.id].requires_grad;
        Ok(self.push(out_shape, vals, rg, Op::SliceChannels { input: a.id, start, end }))
    }

    /// Full reduction to a scalar of shape [1].
    pub fn sum(&mut self, a: &Tensor) -> Tensor {
        let mut acc = T::zero();
        for &x in &self.nodes[a.id].values {
            acc = acc + x;
        }
        let rg = self.nodes[a.id].requires_grad;
        self.push(vec![1], vec![acc], rg, Op::Sum(a.id))
    }

    /// Mean over all elements, expressed as sum * (1/n).
    pub fn mean(&mut self, a: &Tensor) -> Tensor {
        let n = a.numel();
        let s = self.sum(a);
        self.scalar_affine(&s, T::one() / real::<T>(n as f64), T::zero())
    }

    // ---- structured ops (implemented in sibling modules) ---------------------

    /// Grouped 3D cross-correlation over [N, Cin, D, H, W] with weight
    /// [Cout, Cin/groups, kD, kH, kW] and optional bias [Cout].
    pub fn conv3d(
        &mut self,
        input: &Tensor,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: [usize; 3],
        padding: [usize; 3],
        groups: usize,
    ) -> Result<Tensor, AutodiffError> {
        self.conv3d_with_algo(input, weight, bias, stride, padding, groups, ConvAlgo::Im2col)
    }

    pub fn conv3d_with_algo(
        &mut self,
        input: &Tensor,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: [usize; 3],
        padding: [usize; 3],
        groups: usize,
        algo: ConvAlgo,
    ) -> Result<Tensor, AutodiffError> {
        self.check(input)?;
        self.check(weight)?;
        if let Some(b) = bias {
            self.check(b)?;
        }
        conv::forward(self, input, weight, bias, stride, padding, groups, algo)
    }

    /// Per-(sample, channel) normalization over the spatial extent with
    /// affine parameters gamma/beta of shape [C].
    pub fn instance_norm3d(
        &mut self,
        input: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        eps: T,
    ) -> Result<Tensor, AutodiffError> {
        self.check(input)?;
        self.check(gamma)?;
        self.check(beta)?;
        norm::forward(self, input, gamma, beta, eps)
    }

    /// Trilinear resize (align-corners-false) of [N, C, D, H, W] to the given
    /// spatial dims. Doubling every axis is the plain upsampling case;
    /// arbitrary targets cover odd skip-connection sizes.
    pub fn upsample_trilinear(
        &mut self,
        input: &Tensor,
        out_dhw: [usize; 3],
    ) -> Result<Tensor, AutodiffError> {
        self.check(input)?;
        resize::forward(self, input, out_dhw)
    }

    /// Factor-2 upsampling of every spatial axis.
    pub fn upsample_x2(&mut self, input: &Tensor) -> Result<Tensor, AutodiffError> {
        self.check(input)?;
        if input.shape.len() != 5 {
            return Err(AutodiffError::ShapeMismatch("upsample expects [N,C,D,H,W]".into()));
        }
        let out = [input.shape[2] * 2, input.shape[3] * 2, input.shape[4] * 2];
        resize::forward(self, input, out)
    }

    // ---- backward -------------------------------------------------------

    /// Reverse sweep from a scalar loss. Gradient buffers are zero-allocated
    /// for every tensor that requires gradients, so tensors that do not
    /// participate in the loss end with exactly zero gradients.
    pub fn backward(&mut self, loss: &Tensor) -> Result<(), AutodiffError> {
        self.check(loss)?;
        if loss.numel() != 1 {
            return Err(AutodiffError::NotScalar);
        }
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        self.consumed = true;

        // Gradients live in a side table during the sweep so node values
        // stay immutably readable while gradients are mutated.
        let mut grads: Vec<Option<Vec<T>>> = self
            .nodes
            .iter()
            .map(|n| n.requires_grad.then(|| vec![T::zero(); n.values.len()]))
            .collect();

        if let Some(g) = grads[loss.id].as_mut() {
            g[0] = T::one();
            for id in (0..self.nodes.len()).rev() {
                let Some(gout) = grads[id].take() else { continue };
                self.backward_node(id, &gout, &mut grads);
                grads[id] = Some(gout);
            }
        }
        // else: the loss depends on no gradient-requiring tensor, and
        // all-zero gradients for requiring leaves is the correct result.

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = g;
        }
        Ok(())
    }

    fn backward_node(&self, id: usize, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                if let Some(g) = grads[a].as_mut() {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi = *gi + go;
                    }
                }
                if let Some(g) = grads[b].as_mut() {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi = *gi + go;
                    }
                }
            }
            &Op::Mul(a, b) => {
                if let Some(g) = grads[a].as_mut() {
                    let vb = &self.nodes[b].values;
                    for i in 0..g.len() {
                        g[i] = g[i] + gout[i] * vb[i];
                    }
                }
                if let Some(g) = grads[b].as_mut() {
                    let va = &self.nodes[a].values;
                    for i in 0..g.len() {
                        g[i] = g[i] + gout[i] * va[i];
                    }
                }
            }
            &Op::Div(a, b) => {
                if let Some(g) = grads[a].as_mut() {
                    let vb = &self.nodes[b].values;
                    for i in 0..g.len() {
                        g[i] = g[i] + gout[i] / vb[i];
                    }
                }
                if let Some(g) = grads[b].as_mut() {
                    let va = &self.nodes[a].values;
                    let vb = &self.nodes[b].values;
                    for i in 0..g.len() {
                        g[i] = g[i] - gout[i] * va[i] / (vb[i] * vb[i]);
                    }
                }
            }
            &Op::ScalarAffine { input, mul } => {
                if let Some(g) = grads[input].as_mut() {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi = *gi + mul * go;
                    }
                }
            }
            &Op::Relu(a) => {
                if let Some(g) = grads[a].as_mut() {
                    let vx = &self.nodes[a].values;
                    for i in 0..g.len() {
                        if vx[i] > T::zero() {
                            g[i] = g[i] + gout[i];
                        }
                    }
                }
            }
            &Op::LeakyRelu { input, slope } => {
                if let Some(g) = grads[input].as_mut() {
                    let vx = &self.nodes[input].values;
                    for i in 0..g.len() {
                        let f = if vx[i] > T::zero() { T::one() } else { slope };
                        g[i] = g[i] + f * gout[i];
                    }
                }
            }
            &Op::Sigmoid(a) => {
                if let Some(g) = grads[a].as_mut() {
                    let vy = &node.values;
                    for i in 0..g.len() {
                        g[i] = g[i] + gout[i] * vy[i] * (T::one() - vy[i]);
                    }
                }
            }
            &Op::PowConst { input, exponent } => {
                if let Some(g) = grads[input].as_mut() {
                    let vx = &self.nodes[input].values;
                    for i in 0..g.len() {
                        g[i] = g[i] + gout[i] * exponent * vx[i].powf(exponent - T::one());
                    }
                }
            }
            &Op::Ln(a) => {
                if let Some(g) = grads[a].as_mut() {
                    let vx = &self.nodes[a].values;
                    for i in 0..g.len() {
                        g[i] = g[i] + gout[i] / vx[i];
                    }
                }
            }
            &Op::Clamp { input, lo, hi } => {
                if let Some(g) = grads[input].as_mut() {
                    let vx = &self.nodes[input].values;
                    for i in 0..g.len() {
                        if vx[i] >= lo && vx[i] <= hi {
                            g[i] = g[i] + gout[i];
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let axis = *axis;
                let axis_total = node.shape[axis];
                let outer: usize = node.shape[..axis].iter().product();
                let inner: usize = node.shape[axis + 1..].iter().product();
                let mut offset = 0usize;
                for &src in inputs {
                    let e = self.nodes[src].shape[axis];
                    if let Some(g) = grads[src].as_mut() {
                        for o in 0..outer {
                            let from = (o * axis_total + offset) * inner;
                            let to = o * e * inner;
                            for i in 0..e * inner {
                                g[to + i] = g[to + i] + gout[from + i];
                            }
                        }
                    }
                    offset += e;
                }
            }
            &Op::SliceChannels { input, start, end } => {
                if let Some(g) = grads[input].as_mut() {
                    let c = self.nodes[input].shape[1];
                    let outer = self.nodes[input].shape[0];
                    let inner: usize = self.nodes[input].shape[2..].iter().product();
                    let width = end - start;
                    for o in 0..outer {
                        let to = (o * c + start) * inner;
                        let from = o * width * inner;
                        for i in 0..width * inner {
                            g[to + i] = g[to + i] + gout[from + i];
                        }
                    }
                }
            }
            &Op::Sum(a) => {
                if let Some(g) = grads[a].as_mut() {
                    let go = gout[0];
                    for gi in g.iter_mut() {
                        *gi = *gi + go;
                    }
                }
            }
            &Op::Conv3d { input, weight, bias, stride, padding, groups } => {
                conv::backward(self, input, weight, bias, stride, padding, groups, gout, grads);
            }
            Op::InstanceNorm { input, gamma, beta, mean, inv_std } => {
                norm::backward(self, *input, *gamma, *beta, mean, inv_std, gout, grads);
            }
            &Op::Resize3 { input, out_dhw } => {
                resize::backward(self, input, out_dhw, gout, grads);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tape() -> Tape<f64> {
        Tape::new()
    }

    #[test]
    fn add_mul_div_values_and_grads() {
        let mut t = tape();
        let a = t.leaf(vec![1.0, 2.0, -3.0], &[3], true).unwrap();
        let b = t.leaf(vec![4.0, -5.0, 6.0], &[3], true).unwrap();
        let s = t.add(&a, &b).unwrap();
        let p = t.mul(&s, &a).unwrap();
        let q = t.div(&p, &b).unwrap(); // q = (a + b) a / b
        assert_eq!(t.value(&s), &[5.0, -3.0, 3.0]);
        assert_eq!(t.value(&p), &[5.0, -6.0, -9.0]);
        assert_eq!(t.value(&q), &[1.25, 1.2, -1.5]);
        let loss = t.sum(&q);
        t.backward(&loss).unwrap();
        // f = (a^2 + ab) / b  =>  df/da = (2a + b)/b, df/db = -a^2/b^2
        let ga = t.grad(&a).unwrap().to_vec();
        let gb = t.grad(&b).unwrap().to_vec();
        for i in 0..3 {
            let (av, bv) = ([1.0f64, 2.0, -3.0][i], [4.0f64, -5.0, 6.0][i]);
            assert!((ga[i] - (2.0 * av + bv) / bv).abs() < 1e-12);
            assert!((gb[i] - (-av * av / (bv * bv))).abs() < 1e-12);
        }
    }

    #[test]
    fn unary_op_values() {
        let mut t = tape();
        let a = t.leaf(vec![-2.0, 0.0, 3.0], &[3], false).unwrap();
        let r = t.relu(&a);
        assert_eq!(t.value(&r), &[0.0, 0.0, 3.0]);
        let l = t.leaky_relu(&a, 0.01);
        assert_eq!(t.value(&l), &[-0.02, 0.0, 3.0]);
        let s = t.sigmoid(&a);
        let want = [1.0 / (1.0 + 2f64.exp()), 0.5, 1.0 / (1.0 + (-3f64).exp())];
        for (got, w) in t.value(&s).iter().zip(want) {
            assert!((got - w).abs() < 1e-15);
        }
        let c = t.clamp(&a, -1.0, 1.0);
        assert_eq!(t.value(&c), &[-1.0, 0.0, 1.0]);
        let p = t.pow_const(&a, 2.0);
        assert_eq!(t.value(&p), &[4.0, 0.0, 9.0]);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        let mut t = tape();
        let a = t.leaf(vec![-800.0, 800.0], &[2], false).unwrap();
        let s = t.sigmoid(&a);
        let v = t.value(&s).to_vec();
        assert!(v[0] >= 0.0 && v[0] < 1e-300);
        assert!((v[1] - 1.0).abs() < 1e-15);
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn sum_and_mean() {
        let mut t = tape();
        let a = t.leaf(vec![1.0, 2.0, 3.0, 4.0], &[2, 2], true).unwrap();
        let s = t.sum(&a);
        assert_eq!(t.scalar_value(&s), 10.0);
        let m = t.mean(&a);
        assert_eq!(t.scalar_value(&m), 2.5);
        t.backward(&m).unwrap();
        assert_eq!(t.grad(&a).unwrap(), &[0.25; 4]);
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let mut t = tape();
        let a = t.leaf(vec![1.0, 2.0, 3.0, 4.0], &[1, 2, 2], true).unwrap();
        let b = t.leaf(vec![9.0, 8.0], &[1, 1, 2], true).unwrap();
        let c = t.concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[1, 3, 2]);
        assert_eq!(t.value(&c), &[1.0, 2.0, 3.0, 4.0, 9.0, 8.0]);
        let back = t.slice_channels(&c, 2, 3).unwrap();
        assert_eq!(t.value(&back), &[9.0, 8.0]);
        let loss = t.sum(&back);
        t.backward(&loss).unwrap();
        assert_eq!(t.grad(&a).unwrap(), &[0.0; 4]);
        assert_eq!(t.grad(&b).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn concat_batched_blocks_interleave() {
        let mut t = tape();
        // batch of 2 so the outer loop exercises non-trivial striding
        let a = t.leaf(vec![1.0, 2.0, 3.0, 4.0], &[2, 1, 2], false).unwrap();
        let b = t.leaf(vec![5.0, 6.0, 7.0, 8.0], &[2, 1, 2], false).unwrap();
        let c = t.concat(&[&a, &b], 1).unwrap();
        assert_eq!(t.value(&c), &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
    }

    #[test]
    fn concat_shape_mismatch_rejected() {
        let mut t = tape();
        let a = t.leaf(vec![0.0; 4], &[1, 2, 2], false).unwrap();
        let b = t.leaf(vec![0.0; 3], &[1, 1, 3], false).unwrap();
        assert!(matches!(t.concat(&[&a, &b], 1), Err(AutodiffError::ShapeMismatch(_))));
    }

    #[test]
    fn non_participating_tensor_gets_exact_zero_grad() {
        let mut t = tape();
        let a = t.leaf(vec![2.0, 3.0], &[2], true).unwrap();
        let unused = t.leaf(vec![7.0, 7.0], &[2], true).unwrap();
        let loss = t.sum(&a);
        t.backward(&loss).unwrap();
        assert_eq!(t.grad(&unused).unwrap(), &[0.0, 0.0]);
        assert_eq!(t.grad(&a).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn requires_grad_propagates_through_ops() {
        let mut t = tape();
        let a = t.leaf(vec![1.0], &[1], false).unwrap();
        let b = t.leaf(vec![2.0], &[1], true).unwrap();
        let c = t.add(&a, &b).unwrap();
        let d = t.relu(&a);
        let loss = t.sum(&c);
        t.backward(&loss).unwrap();
        assert!(t.grad(&a).is_none());
        assert!(t.grad(&d).is_none());
        assert_eq!(t.grad(&b).unwrap(), &[1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = tape();
        let a = t.leaf(vec![1.0, 2.0], &[2], true).unwrap();
        assert_eq!(t.backward(&a), Err(AutodiffError::NotScalar));
    }

    #[test]
    fn backward_twice_rejected() {
        let mut t = tape();
        let a = t.leaf(vec![1.0], &[1], true).unwrap();
        let loss = t.sum(&a);
        t.backward(&loss).unwrap();
        assert_eq!(t.backward(&loss), Err(AutodiffError::TapeConsumed));
    }

    #[test]
    fn foreign_tensor_rejected() {
        let mut t1 = tape();
        let mut t2 = tape();
        let a = t1.leaf(vec![1.0, 2.0, 3.0], &[3], true).unwrap();
        let b = t2.leaf(vec![1.0], &[1], true).unwrap();
        assert!(matches!(t2.add(&a, &a), Err(AutodiffError::ForeignTensor)));
        let s = t2.sum(&b);
        assert!(matches!(t1.backward(&s), Err(AutodiffError::ForeignTensor)));
    }

    #[test]
    fn grad_is_none_before_backward() {
        let mut t = tape();
        let a = t.leaf(vec![1.0], &[1], true).unwrap();
        assert!(t.grad(&a).is_none());
    }

    #[test]
    fn disconnected_loss_leaves_zero_grads() {
        let mut t = tape();
        let w = t.leaf(vec![5.0], &[1], true).unwrap();
        let c = t.leaf(vec![3.0], &[1], false).unwrap();
        let loss = t.sum(&c); // loss itself does not require grad
        t.backward(&loss).unwrap();
        assert_eq!(t.grad(&w).unwrap(), &[0.0]);
    }

    #[test]
    fn leaf_length_must_match_shape() {
        let mut t = tape();
        assert!(matches!(
            t.leaf(vec![1.0, 2.0], &[3], false),
            Err(AutodiffError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn fanout_accumulates_gradients() {
        // x used twice: y = x*x + x  =>  dy/dx = 2x + 1
        let mut t = tape();
        let x = t.leaf(vec![3.0], &[1], true).unwrap();
        let sq = t.mul(&x, &x).unwrap();
        let y = t.add(&sq, &x).unwrap();
        let loss = t.sum(&y);
        t.backward(&loss).unwrap();
        assert_eq!(t.grad(&x).unwrap(), &[7.0]);
    }
}
