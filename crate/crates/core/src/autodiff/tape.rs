use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gemm::gemm;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Relu(Var),
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    GlobalAvgPool(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mask {
        input: Var,
        mask: Vec<f64>,
    },
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
    Sum(Var),
    SumSquares(Var),
    Scale(Var, f64),
    Exp(Var),
    AddN(Vec<Var>),
    Concat(Vec<Var>),
    Distance(Var, Var),
    /// Stores the input norm.
    L2Normalize(Var, f64),
    ScaleShift {
        input: Var,
        scale: Var,
        shift: Var,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation. Nodes are stored in creation order,
/// so every node's parents precede it and a reverse sweep is a valid
/// topological traversal for [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to the tape's trainable leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` for leaves that are frozen or not reachable from the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    (size + 2 * padding).checked_sub(kernel).map(|span| span / stride + 1)
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    padding: usize,
    (ho, wo): (usize, usize),
) -> Vec<f64> {
    let p = ho * wo;
    let mut cols = vec![0.0; c * kh * kw * p];
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = ((ci * kh + i) * kw + j) * p;
                for oy in 0..ho {
                    let Some(iy) = (oy * stride + i).checked_sub(padding).filter(|&v| v < h) else {
                        continue;
                    };
                    let src = (ci * h + iy) * w;
                    let dst = row + oy * wo;
                    for ox in 0..wo {
                        if let Some(ix) = (ox * stride + j).checked_sub(padding).filter(|&v| v < w) {
                            cols[dst + ox] = x[src + ix];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im_add(
    cols: &[f64],
    dx: &mut [f64],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    padding: usize,
    (ho, wo): (usize, usize),
) {
    let p = ho * wo;
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = ((ci * kh + i) * kw + j) * p;
                for oy in 0..ho {
                    let Some(iy) = (oy * stride + i).checked_sub(padding).filter(|&v| v < h) else {
                        continue;
                    };
                    let dst = (ci * h + iy) * w;
                    let src = row + oy * wo;
                    for ox in 0..wo {
                        if let Some(ix) = (ox * stride + j).checked_sub(padding).filter(|&v| v < w) {
                            dx[dst + ix] += cols[src + ox];
                        }
                    }
                }
            }
        }
    }
}

fn same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

fn scalar_operand(what: &str, t: &Tensor) -> Result<f64> {
    t.item().map_err(|_| Error::shape(format!("{what} must be a single value, got {:?}", t.shape())))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, input: Var, value: Tensor, op: Op) -> Var {
        let rg = self.any_grad(&[input]);
        self.push(value, op, rg)
    }

    /// Cross-correlation of `[C,H,W]` input with `[O,C,kh,kw]` kernels plus bias.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (x, k, b) = (self.value(input), self.value(kernel), self.value(bias));
        let (&[c, h, w], &[o, kc, kh, kw]) = (x.shape(), k.shape()) else {
            return Err(Error::shape(format!(
                "conv2d expects [C,H,W] input and [O,C,kh,kw] kernel, got {:?} and {:?}",
                x.shape(),
                k.shape()
            )));
        };
        if kc != c {
            return Err(Error::shape(format!("conv2d kernel expects {kc} input channels, input has {c}")));
        }
        if b.shape() != [o] {
            return Err(Error::shape(format!("conv2d bias {:?} for {o} output channels", b.shape())));
        }
        if stride == 0 {
            return Err(Error::arg("conv2d stride must be at least 1"));
        }
        let (Some(ho), Some(wo)) = (conv_out(h, kh, stride, padding), conv_out(w, kw, stride, padding)) else {
            return Err(Error::shape(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        };
        let p = ho * wo;
        let mut out = vec![0.0; o * p];
        for (row, bias) in out.chunks_mut(p).zip(b.data()) {
            row.fill(*bias);
        }
        let kdim = c * kh * kw;
        if kh == 1 && kw == 1 && stride == 1 && padding == 0 {
            gemm(o, kdim, p, k.data(), false, x.data(), false, &mut out, true);
        } else {
            let cols = im2col(x.data(), (c, h, w), (kh, kw), stride, padding, (ho, wo));
            gemm(o, kdim, p, k.data(), false, &cols, false, &mut out, true);
        }
        let value = Tensor::new(vec![o, ho, wo], out)?;
        let rg = self.any_grad(&[input, kernel, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    /// Per-window maximum over `[C,H,W]`; padded positions never win.
    pub fn max_pool(&mut self, input: Var, window: usize, stride: usize, padding: usize) -> Result<Var> {
        let x = self.value(input);
        let &[c, h, w] = x.shape() else {
            return Err(Error::shape(format!("max_pool expects [C,H,W], got {:?}", x.shape())));
        };
        if window == 0 || stride == 0 || padding >= window {
            return Err(Error::arg(format!(
                "max_pool window {window}, stride {stride}, padding {padding}"
            )));
        }
        let (Some(ho), Some(wo)) = (conv_out(h, window, stride, padding), conv_out(w, window, stride, padding)) else {
            return Err(Error::shape(format!("max_pool window {window} larger than input {h}x{w}")));
        };
        let data = x.data();
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = (f64::NEG_INFINITY, usize::MAX);
                    for i in 0..window {
                        let Some(iy) = (oy * stride + i).checked_sub(padding).filter(|&v| v < h) else {
                            continue;
                        };
                        for j in 0..window {
                            let Some(ix) = (ox * stride + j).checked_sub(padding).filter(|&v| v < w) else {
                                continue;
                            };
                            let idx = (ci * h + iy) * w + ix;
                            if data[idx] > best.0 || best.1 == usize::MAX {
                                best = (data[idx], idx);
                            }
                        }
                    }
                    out.push(best.0);
                    argmax.push(best.1);
                }
            }
        }
        let value = Tensor::new(vec![c, ho, wo], out)?;
        Ok(self.unary(input, value, Op::MaxPool { input, argmax }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| v.max(0.0));
        self.unary(input, value, Op::Relu(input))
    }

    /// `weight · flatten(input) + bias` with `weight: [m, n]`, `bias: [m]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, wt, b) = (self.value(input), self.value(weight), self.value(bias));
        let &[m, n] = wt.shape() else {
            return Err(Error::shape(format!("dense weight must be [m,n], got {:?}", wt.shape())));
        };
        if x.numel() != n {
            return Err(Error::shape(format!("dense weight [{m},{n}] applied to {} inputs", x.numel())));
        }
        if b.shape() != [m] {
            return Err(Error::shape(format!("dense bias {:?} for {m} outputs", b.shape())));
        }
        let mut out = b.data().to_vec();
        gemm(m, n, 1, wt.data(), false, x.data(), false, &mut out, true);
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(Tensor::vector(out), Op::Dense { input, weight, bias }, rg))
    }

    /// Spatial mean of `[C,H,W]`, giving `[C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let &[c, h, w] = x.shape() else {
            return Err(Error::shape(format!("global_avg_pool expects [C,H,W], got {:?}", x.shape())));
        };
        let area = (h * w) as f64;
        let out = x.data().chunks(h * w).map(|ch| ch.iter().sum::<f64>() / area).collect();
        debug_assert_eq!(c, x.numel() / (h * w));
        Ok(self.unary(input, Tensor::vector(out), Op::GlobalAvgPool(input)))
    }

    /// Elementwise sum of equal shapes (residual connections).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("sub", ta, tb)?;
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-rate)`. Identity when
    /// not training.
    pub fn dropout(&mut self, input: Var, rate: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::arg(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(input);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - rate);
        let x = self.value(input);
        let mask: Vec<f64> = (0..x.numel())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.unary(input, value, Op::Mask { input, mask }))
    }

    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        if x.rank() != 1 || x.numel() == 0 {
            return Err(Error::shape(format!("softmax expects a non-empty vector, got {:?}", x.shape())));
        }
        let value = Tensor::vector(softmax(x.data()));
        Ok(self.unary(input, value, Op::Softmax(input)))
    }

    /// `-log softmax(logits)[label]`, stabilized by max-subtraction.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let x = self.value(logits);
        if x.rank() != 1 {
            return Err(Error::shape(format!("cross_entropy expects a logit vector, got {:?}", x.shape())));
        }
        if label >= x.numel() {
            return Err(Error::arg(format!("label {label} out of range for {} classes", x.numel())));
        }
        let max = x.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + x.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - x.data()[label];
        let probs = softmax(x.data());
        Ok(self.unary(logits, Tensor::scalar(loss), Op::CrossEntropy { logits, label, probs }))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        self.unary(input, value, Op::Sum(input))
    }

    pub fn sum_squares(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).data().iter().map(|v| v * v).sum());
        self.unary(input, value, Op::SumSquares(input))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let value = self.value(input).map(|v| v * factor);
        self.unary(input, value, Op::Scale(input, factor))
    }

    pub fn exp(&mut self, input: Var) -> Var {
        let value = self.value(input).map(f64::exp);
        self.unary(input, value, Op::Exp(input))
    }

    /// Sum of equally shaped values.
    pub fn add_n(&mut self, inputs: &[Var]) -> Result<Var> {
        let Some(first) = inputs.first() else {
            return Err(Error::arg("add_n of no inputs"));
        };
        let mut acc = self.value(*first).clone();
        for v in &inputs[1..] {
            let t = self.value(*v);
            same_shape("add_n", &acc, t)?;
            for (a, b) in acc.data_mut().iter_mut().zip(t.data()) {
                *a += b;
            }
        }
        let rg = self.any_grad(inputs);
        Ok(self.push(acc, Op::AddN(inputs.to_vec()), rg))
    }

    /// Flattens and joins values into one vector.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::arg("concat of no inputs"));
        }
        let out: Vec<f64> = inputs.iter().flat_map(|v| self.value(*v).data().iter().copied()).collect();
        let rg = self.any_grad(inputs);
        Ok(self.push(Tensor::vector(out), Op::Concat(inputs.to_vec()), rg))
    }

    /// Euclidean distance; the gradient at zero distance is taken as zero.
    pub fn distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("distance", ta, tb)?;
        let d = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::scalar(d), Op::Distance(a, b), rg))
    }

    /// `input / ‖input‖`; a zero input maps to zero with zero gradient.
    pub fn l2_normalize(&mut self, input: Var) -> Var {
        let norm = self.value(input).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let value = if norm > 0.0 {
            self.value(input).map(|v| v / norm)
        } else {
            self.value(input).clone()
        };
        self.unary(input, value, Op::L2Normalize(input, norm))
    }

    /// `scale * input + shift` with single-value `scale` and `shift`.
    pub fn scale_shift(&mut self, input: Var, scale: Var, shift: Var) -> Result<Var> {
        let s = scalar_operand("scale_shift scale", self.value(scale))?;
        let o = scalar_operand("scale_shift shift", self.value(shift))?;
        let value = self.value(input).map(|v| s * v + o);
        let rg = self.any_grad(&[input, scale, shift]);
        Ok(self.push(value, Op::ScaleShift { input, scale, shift }, rg))
    }

    /// Same values under a new shape.
    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        Ok(self.unary(input, value, Op::Reshape(input)))
    }

    /// Reverse sweep from a single-valued `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::arg(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        if root.requires_grad {
            grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));
        }
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            if let Some(g) = grads[i].take() {
                self.propagate(i, &g, &mut grads);
            }
        }
        Ok(Gradients { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(
            grads[v.0]
                .get_or_insert_with(|| Tensor::zeros(node.value.shape()))
                .data_mut(),
        )
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let (x, k) = (self.value(*input), self.value(*kernel));
                let (&[c, h, w], &[o, _, kh, kw], &[_, ho, wo]) = (x.shape(), k.shape(), node.value.shape()) else {
                    unreachable!("shapes checked in forward");
                };
                let p = ho * wo;
                let kdim = c * kh * kw;
                let pointwise = kh == 1 && kw == 1 && *stride == 1 && *padding == 0;
                if let Some(db) = self.slot(grads, *bias) {
                    for (acc, row) in db.iter_mut().zip(gd.chunks(p)) {
                        *acc += row.iter().sum::<f64>();
                    }
                }
                if self.nodes[kernel.0].requires_grad {
                    let cols;
                    let cols_ref = if pointwise {
                        x.data()
                    } else {
                        cols = im2col(x.data(), (c, h, w), (kh, kw), *stride, *padding, (ho, wo));
                        &cols
                    };
                    let dk = self.slot(grads, *kernel).expect("kernel requires grad");
                    gemm(o, p, kdim, gd, false, cols_ref, true, dk, true);
                }
                if self.nodes[input.0].requires_grad {
                    if pointwise {
                        let dx = self.slot(grads, *input).expect("input requires grad");
                        gemm(kdim, o, p, k.data(), true, gd, false, dx, true);
                    } else {
                        let mut dcols = vec![0.0; kdim * p];
                        gemm(kdim, o, p, k.data(), true, gd, false, &mut dcols, false);
                        let dx = self.slot(grads, *input).expect("input requires grad");
                        col2im_add(&dcols, dx, (c, h, w), (kh, kw), *stride, *padding, (ho, wo));
                    }
                }
            }
            Op::MaxPool { input, argmax } => {
                if let Some(dx) = self.slot(grads, *input) {
                    for (&idx, gv) in argmax.iter().zip(gd) {
                        dx[idx] += gv;
                    }
                }
            }
            Op::Relu(input) => {
                if let Some(dx) = self.slot(grads, *input) {
                    for ((d, gv), y) in dx.iter_mut().zip(gd).zip(node.value.data()) {
                        if *y > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Dense { input, weight, bias } => {
                let (x, wt) = (self.value(*input), self.value(*weight));
                let (m, n) = (wt.shape()[0], wt.shape()[1]);
                if let Some(db) = self.slot(grads, *bias) {
                    for (d, gv) in db.iter_mut().zip(gd) {
                        *d += gv;
                    }
                }
                if let Some(dw) = self.slot(grads, *weight) {
                    gemm(m, 1, n, gd, false, x.data(), false, dw, true);
                }
                if let Some(dx) = self.slot(grads, *input) {
                    gemm(n, m, 1, wt.data(), true, gd, false, dx, true);
                }
            }
            Op::GlobalAvgPool(input) => {
                let x = self.value(*input);
                let area = x.numel() / gd.len();
                if let Some(dx) = self.slot(grads, *input) {
                    for (chunk, gv) in dx.chunks_mut(area).zip(gd) {
                        let share = gv / area as f64;
                        chunk.iter_mut().for_each(|d| *d += share);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(d) = self.slot(grads, *v) {
                        d.iter_mut().zip(gd).for_each(|(d, gv)| *d += gv);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.slot(grads, *a) {
                    d.iter_mut().zip(gd).for_each(|(d, gv)| *d += gv);
                }
                if let Some(d) = self.slot(grads, *b) {
                    d.iter_mut().zip(gd).for_each(|(d, gv)| *d -= gv);
                }
            }
            Op::Mask { input, mask } => {
                if let Some(dx) = self.slot(grads, *input) {
                    for ((d, gv), m) in dx.iter_mut().zip(gd).zip(mask) {
                        *d += gv * m;
                    }
                }
            }
            Op::Softmax(input) => {
                let y = node.value.data();
                let dot: f64 = gd.iter().zip(y).map(|(a, b)| a * b).sum();
                if let Some(dx) = self.slot(grads, *input) {
                    for ((d, gv), yv) in dx.iter_mut().zip(gd).zip(y) {
                        *d += yv * (gv - dot);
                    }
                }
            }
            Op::CrossEntropy { logits, label, probs } => {
                if let Some(dx) = self.slot(grads, *logits) {
                    for (c, (d, p)) in dx.iter_mut().zip(probs).enumerate() {
                        let onehot = if c == *label { 1.0 } else { 0.0 };
                        *d += gd[0] * (p - onehot);
                    }
                }
            }
            Op::Sum(input) => {
                if let Some(dx) = self.slot(grads, *input) {
                    dx.iter_mut().for_each(|d| *d += gd[0]);
                }
            }
            Op::SumSquares(input) => {
                let x = self.value(*input);
                if let Some(dx) = self.slot(grads, *input) {
                    for (d, v) in dx.iter_mut().zip(x.data()) {
                        *d += 2.0 * gd[0] * v;
                    }
                }
            }
            Op::Scale(input, factor) => {
                if let Some(dx) = self.slot(grads, *input) {
                    dx.iter_mut().zip(gd).for_each(|(d, gv)| *d += factor * gv);
                }
            }
            Op::Exp(input) => {
                if let Some(dx) = self.slot(grads, *input) {
                    for ((d, gv), y) in dx.iter_mut().zip(gd).zip(node.value.data()) {
                        *d += gv * y;
                    }
                }
            }
            Op::AddN(inputs) => {
                for v in inputs {
                    if let Some(d) = self.slot(grads, *v) {
                        d.iter_mut().zip(gd).for_each(|(d, gv)| *d += gv);
                    }
                }
            }
            Op::Concat(inputs) => {
                let mut offset = 0;
                for v in inputs {
                    let len = self.value(*v).numel();
                    if let Some(d) = self.slot(grads, *v) {
                        d.iter_mut().zip(&gd[offset..offset + len]).for_each(|(d, gv)| *d += gv);
                    }
                    offset += len;
                }
            }
            Op::L2Normalize(input, norm) => {
                if *norm == 0.0 {
                    return;
                }
                // d(x/|x|) = (g - y (y . g)) / |x|
                let y = node.value.data();
                let dot: f64 = y.iter().zip(gd).map(|(a, b)| a * b).sum();
                if let Some(d) = self.slot(grads, *input) {
                    for ((d, yi), gi) in d.iter_mut().zip(y).zip(gd) {
                        *d += (gi - yi * dot) / norm;
                    }
                }
            }
            Op::Distance(a, b) => {
                let dist = node.value.data()[0];
                if dist == 0.0 {
                    return;
                }
                let (ta, tb) = (self.value(*a), self.value(*b));
                let coef = gd[0] / dist;
                if let Some(d) = self.slot(grads, *a) {
                    for ((d, x), y) in d.iter_mut().zip(ta.data()).zip(tb.data()) {
                        *d += coef * (x - y);
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for ((d, x), y) in d.iter_mut().zip(ta.data()).zip(tb.data()) {
                        *d -= coef * (x - y);
                    }
                }
            }
            Op::ScaleShift { input, scale, shift } => {
                let x = self.value(*input);
                let s = self.value(*scale).data()[0];
                if let Some(dx) = self.slot(grads, *input) {
                    dx.iter_mut().zip(gd).for_each(|(d, gv)| *d += s * gv);
                }
                if let Some(ds) = self.slot(grads, *scale) {
                    ds[0] += gd.iter().zip(x.data()).map(|(a, b)| a * b).sum::<f64>();
                }
                if let Some(dsh) = self.slot(grads, *shift) {
                    dsh[0] += gd.iter().sum::<f64>();
                }
            }
            Op::Reshape(input) => {
                if let Some(dx) = self.slot(grads, *input) {
                    dx.iter_mut().zip(gd).for_each(|(d, gv)| *d += gv);
                }
            }
        }
    }
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn pointwise_conv_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2, 2], &[1.0, -2.0, 3.0, 4.5]));
        let k = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, k, b, 1, 0).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn conv_of_ones() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 3, 3], 1.0));
        let k = tape.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, k, b, 1, 0).unwrap();
        assert_eq!(tape.value(y), &Tensor::full(&[1, 2, 2], 4.0));
    }

    #[test]
    fn conv_output_shapes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3, 224, 224]));
        let k = tape.constant(Tensor::zeros(&[8, 3, 7, 7]));
        let b = tape.constant(Tensor::zeros(&[8]));
        let y = tape.conv2d(x, k, b, 2, 3).unwrap();
        assert_eq!(tape.value(y).shape(), &[8, 112, 112]);
        let p = tape.max_pool(y, 3, 2, 1).unwrap();
        assert_eq!(tape.value(p).shape(), &[8, 56, 56]);

        let x = tape.constant(Tensor::zeros(&[3, 256, 256]));
        let y = tape.conv2d(x, k, b, 2, 3).unwrap();
        assert_eq!(tape.value(y).shape(), &[8, 128, 128]);
    }

    #[test]
    fn conv_shape_errors() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 4, 4]));
        let k = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[1]));
        assert!(matches!(tape.conv2d(x, k, b, 1, 0), Err(Error::Shape(_))));
        let big = tape.constant(Tensor::zeros(&[1, 2, 5, 5]));
        assert!(matches!(tape.conv2d(x, big, b, 1, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn max_pool_values() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2, 2], &[1.0, 5.0, 3.0, 2.0]));
        let y = tape.max_pool(x, 2, 2, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0]);
        let c = tape.constant(Tensor::full(&[2, 5, 5], 0.7));
        let y = tape.max_pool(c, 3, 2, 1).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn elementwise_ops() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2], &[-3.0, 2.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 2.0]);
        let z = tape.constant(Tensor::zeros(&[2]));
        let s = tape.softmax(z).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
        let g = tape.constant(Tensor::full(&[2048, 7, 7], 1.0));
        let pooled = tape.global_avg_pool(g).unwrap();
        assert_eq!(tape.value(pooled).shape(), &[2048]);
        let a = tape.constant(Tensor::zeros(&[3]));
        assert!(tape.add(x, a).is_err());
    }

    #[test]
    fn dropout_modes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[100], 1.0));
        assert_eq!(tape.dropout(x, 0.5, false, 1).unwrap(), x);
        let y = tape.dropout(x, 0.5, true, 1).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(tape.dropout(x, 1.0, true, 1).is_err());
        assert!(tape.dropout(x, -0.1, true, 1).is_err());
    }

    #[test]
    fn backward_simple_losses() {
        let mut tape = Tape::new();
        let w = tape.param(t(&[2, 3], &[1.0, -2.0, 0.5, 3.0, 0.0, -1.0]));
        let s = tape.sum(w);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap(), &Tensor::full(&[2, 3], 1.0));

        let sq = tape.sum_squares(w);
        let g = tape.backward(sq).unwrap();
        assert_eq!(g.get(w).unwrap(), &tape.value(w).map(|v| 2.0 * v));
    }

    #[test]
    fn backward_rejects_non_scalar_and_skips_constants() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::full(&[2], 1.0));
        let c = tape.constant(Tensor::full(&[2], 3.0));
        assert!(matches!(tape.backward(w), Err(Error::Argument(_))));
        let y = tape.add(w, c).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert!(g.get(w).is_some());
    }

    #[test]
    fn distance_gradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::full(&[3], 1.0));
        let b = tape.param(Tensor::full(&[3], 1.0));
        let d = tape.distance(a, b).unwrap();
        let g = tape.backward(d).unwrap();
        assert!(g.get(a).is_none() || g.get(a).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_is_unbiased() {
        let mut total = 0.0;
        let draws = 10_000;
        for seed in 0..draws {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::full(&[1], 0.8));
            let y = tape.dropout(x, 0.5, true, seed).unwrap();
            total += tape.value(y).data()[0];
        }
        let mean = total / draws as f64;
        assert!((mean - 0.8).abs() / 0.8 < 0.02, "mean {mean}");
    }
}
