//! Define-by-run tape for reverse-mode differentiation.
//!
//! Every op appends a node holding its value and an [`OpRecord`] with the
//! input handles and whatever intermediates its backward rule needs.
//! [`Graph::backward`] walks the nodes in reverse creation order.

use crate::error::{AutodiffError, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Op identity, input references and saved intermediates.
#[derive(Debug)]
pub enum OpRecord {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeomRecord,
        cols: Vec<f64>,
    },
    Sigmoid(Var),
    Tanh(Var),
    Hadamard(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    ConcatChannels(Vec<Var>),
    ConcatAxis0(Vec<Var>),
    SliceChannels {
        input: Var,
        start: usize,
    },
    MaxPool2x2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample2x(Var),
    LogCosh {
        pred: Var,
        target: Var,
    },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug, Clone, Copy)]
pub struct ConvGeomRecord(ConvGeom);

#[derive(Debug)]
struct Node {
    value: Tensor,
    record: OpRecord,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// A single forward computation and its gradient tape.
///
/// Graphs built with [`Graph::inference`] skip saving intermediates; values
/// are identical but `backward` is unavailable for nodes created there.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inference: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            inference: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, OpRecord::Leaf, requires_grad && !self.inference)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_value(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(0.0))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            if let Some(g) = n.grad.as_mut() {
                g.fill(0.0);
            }
        }
    }

    fn push(&mut self, value: Tensor, record: OpRecord, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            record,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        !self.inference && vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims4(&self, op: &'static str, v: Var) -> Result<[usize; 4]> {
        let s = self.shape(v);
        if s.len() != 4 {
            return Err(AutodiffError::Rank {
                op,
                expected: 4,
                found: s.to_vec(),
            });
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// Same-padded 2-D cross-correlation: `[B,Cin,H,W] * [Cout,Cin,k,k] + [Cout]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let [b, cin, h, w] = self.dims4("conv2d", input)?;
        let [cout, wcin, kh, kw] = self.dims4("conv2d", weight)?;
        if wcin != cin {
            return Err(AutodiffError::Dimension {
                op: "conv2d",
                axis: "in_channels",
                expected: cin,
                found: wcin,
            });
        }
        if kh != kw {
            return Err(AutodiffError::Dimension {
                op: "conv2d",
                axis: "kernel_width",
                expected: kh,
                found: kw,
            });
        }
        if kh % 2 == 0 {
            return Err(AutodiffError::EvenKernel(kh));
        }
        let bias_shape = self.shape(bias);
        if bias_shape.len() != 1 || bias_shape[0] != cout {
            return Err(AutodiffError::Dimension {
                op: "conv2d",
                axis: "bias",
                expected: cout,
                found: bias_shape.iter().product(),
            });
        }
        let geom = ConvGeom {
            batch: b,
            in_ch: cin,
            out_ch: cout,
            height: h,
            width: w,
            kernel: kh,
        };
        let (out, cols) = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            &geom,
        );
        let rg = self.any_grad(&[input, weight, bias]);
        let value = Tensor::new(vec![b, cout, h, w], out)?;
        Ok(self.push(
            value,
            OpRecord::Conv2d {
                input,
                weight,
                bias,
                geom: ConvGeomRecord(geom),
                cols: if rg { cols } else { Vec::new() },
            },
            rg,
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, rec: OpRecord) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        let rg = self.any_grad(&[x]);
        self.push(value, rec, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, OpRecord::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, OpRecord::Tanh(x))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v * s, OpRecord::Scale(x, s))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        rec: OpRecord,
    ) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rec, rg))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("hadamard", a, b, |x, y| x * y, OpRecord::Hadamard(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, OpRecord::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, OpRecord::Sub(a, b))
    }

    /// Concatenates rank-4 tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(AutodiffError::EmptyConcat)?;
        let [b, _, h, w] = self.dims4("concat_channels", first)?;
        let mut total = 0;
        for &p in parts {
            let [pb, pc, ph, pw] = self.dims4("concat_channels", p)?;
            for (axis, expected, found) in [("batch", b, pb), ("height", h, ph), ("width", w, pw)] {
                if expected != found {
                    return Err(AutodiffError::Dimension {
                        op: "concat_channels",
                        axis,
                        expected,
                        found,
                    });
                }
            }
            total += pc;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(b * total * hw);
        for bi in 0..b {
            for &p in parts {
                let c = self.shape(p)[1];
                let src = self.value(p).data();
                data.extend_from_slice(&src[bi * c * hw..(bi + 1) * c * hw]);
            }
        }
        let value = Tensor::new(vec![b, total, h, w], data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, OpRecord::ConcatChannels(parts.to_vec()), rg))
    }

    /// Concatenates tensors along their leading axis.
    pub fn concat_axis0(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(AutodiffError::EmptyConcat)?;
        let tail = self.shape(first).get(1..).unwrap_or(&[]).to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_axis0",
                    left: self.shape(first).to_vec(),
                    right: s.to_vec(),
                });
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let value = Tensor::new(shape, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, OpRecord::ConcatAxis0(parts.to_vec()), rg))
    }

    /// Channels `[start, start + len)` of a rank-4 tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [b, c, h, w] = self.dims4("slice_channels", x)?;
        if start + len > c || len == 0 {
            return Err(AutodiffError::ChannelRange {
                start,
                end: start + len,
                channels: c,
            });
        }
        let hw = h * w;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(b * len * hw);
        for bi in 0..b {
            data.extend_from_slice(&src[(bi * c + start) * hw..(bi * c + start + len) * hw]);
        }
        let value = Tensor::new(vec![b, len, h, w], data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, OpRecord::SliceChannels { input: x, start }, rg))
    }

    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let [b, c, h, w] = self.dims4("maxpool2x2", x)?;
        for (axis, extent) in [("height", h), ("width", w)] {
            if extent % 2 != 0 {
                return Err(AutodiffError::OddExtent {
                    op: "maxpool2x2",
                    axis,
                    extent,
                });
            }
        }
        let (out, argmax) = kernels::maxpool2x2(self.value(x).data(), b * c, h, w);
        let value = Tensor::new(vec![b, c, h / 2, w / 2], out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            value,
            OpRecord::MaxPool2x2 {
                input: x,
                argmax: if rg { argmax } else { Vec::new() },
            },
            rg,
        ))
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let [b, c, h, w] = self.dims4("upsample2x", x)?;
        let out = kernels::upsample2x(self.value(x).data(), b * c, h, w);
        let value = Tensor::new(vec![b, c, 2 * h, 2 * w], out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, OpRecord::Upsample2x(x), rg))
    }

    /// Mean of `log(cosh(pred - target))` over all elements.
    pub fn logcosh_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("logcosh_loss", pred, target)?;
        if self.requires_grad(target) {
            return Err(AutodiffError::TargetRequiresGrad);
        }
        let (p, t) = (self.value(pred), self.value(target));
        if !p.all_finite() {
            return Err(AutodiffError::NonFinite("logcosh_loss prediction"));
        }
        if !t.all_finite() {
            return Err(AutodiffError::NonFinite("logcosh_loss target"));
        }
        let n = p.len().max(1) as f64;
        let total: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| kernels::log_cosh(a - b))
            .sum();
        let rg = self.any_grad(&[pred]);
        Ok(self.push(Tensor::scalar(total / n), OpRecord::LogCosh { pred, target }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), OpRecord::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), OpRecord::Mean(x), rg)
    }

    /// Accumulates `d loss / d leaf` into every leaf that requires gradients.
    ///
    /// Leaf gradients are additive across calls; use [`Graph::zero_grad`]
    /// to reset them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let OpRecord::Leaf = self.nodes[i].record {
                let node = &mut self.nodes[i];
                match node.grad.as_mut() {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, f: &dyn Fn(usize) -> f64| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let n = self.nodes[v.0].value.len();
            match grads[v.0].as_mut() {
                Some(buf) => buf.iter_mut().enumerate().for_each(|(j, b)| *b += f(j)),
                None => grads[v.0] = Some((0..n).map(f).collect()),
            }
        };
        match &node.record {
            OpRecord::Leaf => {}
            OpRecord::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            } => {
                let d = kernels::conv2d_backward(g, cols, self.value(*weight).data(), &geom.0);
                acc(*input, &|j| d.input[j]);
                acc(*weight, &|j| d.weight[j]);
                acc(*bias, &|j| d.bias[j]);
            }
            OpRecord::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, &|j| g[j] * y[j] * (1.0 - y[j]));
            }
            OpRecord::Tanh(x) => {
                let y = node.value.data();
                acc(*x, &|j| g[j] * (1.0 - y[j] * y[j]));
            }
            OpRecord::Hadamard(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|j| g[j] * vb[j]);
                acc(*b, &|j| g[j] * va[j]);
            }
            OpRecord::Add(a, b) => {
                acc(*a, &|j| g[j]);
                acc(*b, &|j| g[j]);
            }
            OpRecord::Sub(a, b) => {
                acc(*a, &|j| g[j]);
                acc(*b, &|j| -g[j]);
            }
            OpRecord::Scale(x, s) => acc(*x, &|j| g[j] * s),
            OpRecord::ConcatChannels(parts) => {
                let [_, total, h, w] = node.value.dims4();
                let hw = h * w;
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    let off = offset;
                    acc(p, &|j| {
                        let (bi, r) = (j / (c * hw), j % (c * hw));
                        g[bi * total * hw + off * hw + r]
                    });
                    offset += c;
                }
                debug_assert_eq!(offset, total);
            }
            OpRecord::ConcatAxis0(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let off = offset;
                    acc(p, &|j| g[off + j]);
                    offset += n;
                }
            }
            OpRecord::SliceChannels { input, start } => {
                let [_, c, h, w] = self.value(*input).dims4();
                let len = node.value.shape()[1];
                let hw = h * w;
                let start = *start;
                acc(*input, &|j| {
                    let (bi, r) = (j / (c * hw), j % (c * hw));
                    let ch = r / hw;
                    if ch >= start && ch < start + len {
                        g[(bi * len + ch - start) * hw + r % hw]
                    } else {
                        0.0
                    }
                });
            }
            OpRecord::MaxPool2x2 { input, argmax } => {
                let n = self.value(*input).len();
                let mut d = vec![0.0; n];
                for (o, &src) in argmax.iter().enumerate() {
                    d[src] += g[o];
                }
                acc(*input, &|j| d[j]);
            }
            OpRecord::Upsample2x(x) => {
                let [b, c, h, w] = self.value(*x).dims4();
                let d = kernels::upsample2x_backward(g, b * c, h, w);
                acc(*x, &|j| d[j]);
            }
            OpRecord::LogCosh { pred, target } => {
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                let n = p.len().max(1) as f64;
                acc(*pred, &|j| g[0] * (p[j] - t[j]).tanh() / n);
            }
            OpRecord::Sum(x) => acc(*x, &|_| g[0]),
            OpRecord::Mean(x) => {
                let n = self.value(*x).len().max(1) as f64;
                acc(*x, &|_| g[0] / n);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t4(shape: [usize; 4], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_of_ones_counts_in_bounds_taps() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[1, 1, 3, 3]));
        let w = g.constant(Tensor::ones(&[1, 1, 3, 3]));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, w, b).unwrap();
        let out = g.value(y);
        assert_eq!(out.at4(0, 0, 1, 1), 9.0);
        for (h, w) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(out.at4(0, 0, h, w), 4.0);
        }
        assert_eq!(out.at4(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..2 * 2 * 5 * 4).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = g.constant(t4([2, 2, 5, 4], &data));
        let mut kernel = vec![0.0; 2 * 2 * 9];
        kernel[4] = 1.0; // out 0 <- in 0 centre
        kernel[9 + 9 + 9 + 4] = 1.0; // out 1 <- in 1 centre
        let w = g.constant(t4([2, 2, 3, 3], &kernel));
        let b = g.constant(Tensor::zeros(&[2]));
        let y = g.conv2d(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn conv_reports_offending_axis() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let w = g.constant(Tensor::zeros(&[3, 1, 3, 3]));
        let b = g.constant(Tensor::zeros(&[3]));
        match g.conv2d(x, w, b) {
            Err(AutodiffError::Dimension { axis, expected, found, .. }) => {
                assert_eq!((axis, expected, found), ("in_channels", 2, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
        let w = g.constant(Tensor::zeros(&[3, 2, 2, 2]));
        assert_eq!(g.conv2d(x, w, b), Err(AutodiffError::EvenKernel(2)));
    }

    #[test]
    fn activations_at_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 1, 1]));
        let s = g.sigmoid(x);
        let t = g.tanh(x);
        assert_eq!(g.value(s).data(), &[0.5]);
        assert_eq!(g.value(t).data(), &[0.0]);
    }

    #[test]
    fn hadamard_with_ones_is_identity() {
        let mut g = Graph::new();
        let data = [1.5, -2.0, 0.25, 7.0];
        let x = g.constant(t4([1, 1, 2, 2], &data));
        let ones = g.constant(Tensor::ones(&[1, 1, 2, 2]));
        let y = g.hadamard(x, ones).unwrap();
        assert_eq!(g.value(y).data(), &data);
        let bad = g.constant(Tensor::ones(&[1, 1, 2, 3]));
        assert!(matches!(g.hadamard(x, bad), Err(AutodiffError::ShapeMismatch { .. })));
    }

    #[test]
    fn pooling_and_upsampling() {
        let mut g = Graph::new();
        let x = g.constant(t4([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = g.maxpool2x2(x).unwrap();
        assert_eq!(g.value(p).data(), &[4.0]);

        let five = g.constant(t4([1, 1, 1, 1], &[5.0]));
        let u = g.upsample2x(five).unwrap();
        assert_eq!(g.value(u).shape(), &[1, 1, 2, 2]);
        assert_eq!(g.value(u).data(), &[5.0; 4]);

        let odd = g.constant(Tensor::zeros(&[1, 1, 3, 4]));
        assert!(matches!(
            g.maxpool2x2(odd),
            Err(AutodiffError::OddExtent { axis: "height", extent: 3, .. })
        ));
    }

    #[test]
    fn pool_gradient_routes_to_first_maximum_on_ties() {
        let mut g = Graph::new();
        let x = g.leaf(t4([1, 1, 2, 2], &[3.0, 3.0, 3.0, 3.0]), true);
        let p = g.maxpool2x2(x).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn upsample_gradient_sums_replicas() {
        let mut g = Graph::new();
        let x = g.leaf(t4([1, 1, 1, 2], &[1.0, 2.0]), true);
        let u = g.upsample2x(x).unwrap();
        let s = g.sum(u);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[4.0, 4.0]);
    }

    #[test]
    fn logcosh_regimes() {
        let mut g = Graph::new();
        let p = g.constant(t4([1, 1, 1, 3], &[0.5, -1.0, 2.0]));
        let l = g.logcosh_loss(p, p).unwrap();
        assert_eq!(g.value(l).item(), Some(0.0));

        let a = g.constant(Tensor::scalar(0.01));
        let z = g.constant(Tensor::scalar(0.0));
        let l = g.logcosh_loss(a, z).unwrap();
        let v = g.value(l).item().unwrap();
        assert!((v - 5.0e-5).abs() / 5.0e-5 < 0.01, "{v}");

        let big = g.constant(Tensor::scalar(20.0));
        let l = g.logcosh_loss(big, z).unwrap();
        let v = g.value(l).item().unwrap();
        assert!((v - (20.0 - std::f64::consts::LN_2)).abs() < 1e-6);

        let huge = g.constant(Tensor::scalar(-1000.0));
        let l = g.logcosh_loss(huge, z).unwrap();
        assert!(g.value(l).item().unwrap().is_finite());
    }

    #[test]
    fn logcosh_rejects_bad_inputs() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::scalar(f64::NAN));
        let t = g.constant(Tensor::scalar(0.0));
        assert!(matches!(g.logcosh_loss(p, t), Err(AutodiffError::NonFinite(_))));
        let tr = g.leaf(Tensor::scalar(0.0), true);
        let q = g.constant(Tensor::scalar(1.0));
        assert_eq!(g.logcosh_loss(q, tr), Err(AutodiffError::TargetRequiresGrad));
    }

    #[test]
    fn sum_backward_is_all_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_fn(&[2, 3], |i| i as f64), true);
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_fn(&[4], |i| i as f64 * 0.3 - 0.5), true);
        let y = g.tanh(x);
        let s = g.sum(y);
        g.backward(s).unwrap();
        let once = g.grad(x).unwrap().clone();
        g.backward(s).unwrap();
        let twice = g.grad(x).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
        g.zero_grad();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::ones(&[2]), true);
        assert_eq!(g.backward(x), Err(AutodiffError::NonScalarLoss(vec![2])));
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_fn(&[2, 1, 2, 2], |i| i as f64));
        let b = g.constant(Tensor::from_fn(&[2, 3, 2, 2], |i| 100.0 + i as f64));
        let c = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.shape(c), &[2, 4, 2, 2]);
        let a2 = g.slice_channels(c, 0, 1).unwrap();
        let b2 = g.slice_channels(c, 1, 3).unwrap();
        assert_eq!(g.value(a2), g.value(a));
        assert_eq!(g.value(b2), g.value(b));
        let wrong = g.constant(Tensor::zeros(&[2, 1, 2, 3]));
        assert!(matches!(
            g.concat_channels(&[a, wrong]),
            Err(AutodiffError::Dimension { axis: "width", .. })
        ));
    }
}
