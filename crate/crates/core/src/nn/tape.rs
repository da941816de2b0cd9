//! Reverse-mode differentiation tape.
//!
//! Every primitive appends one node holding its output value and whatever it
//! needs for the backward pass. Nodes are created in topological order, so
//! [`Tape::backward`] walks them once in reverse.

use crate::binary::{sgn, ste_derivative, SteVariant};
use crate::conv::{conv2d, conv2d_backward};
use crate::error::{Error, Result};
use crate::factorized::ConvGeometry;
use crate::linalg::gemm;
use crate::tensor::{mode_product, unfold, DenseTensor, FactorMatrix};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Forward evaluation of sign nodes. Backward always uses the STE derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignForward {
    /// `sgn(x)`, the real binarized network.
    #[default]
    Hard,
    /// The smooth surrogate whose derivative the STE uses. Makes the recorded
    /// computation differentiable end to end, which finite-difference checks
    /// rely on.
    Surrogate,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    MulConst {
        x: Var,
        factor: DenseTensor,
    },
    ModeProduct {
        t: Var,
        u: Var,
        mode: usize,
    },
    Conv2d {
        x: Var,
        k: Var,
        geometry: ConvGeometry,
    },
    Relu(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    Linear {
        x: Var,
        w: Var,
    },
    Sign {
        x: Var,
        variant: SteVariant,
    },
    Abs(Var),
    FilterMean(Var),
    ChannelMean(Var),
    ScaleChannels {
        x: Var,
        s: Var,
    },
    ScaleSpatial {
        x: Var,
        s: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: DenseTensor,
    },
    WeightedSum {
        x: Var,
        weights: DenseTensor,
    },
}

#[derive(Debug)]
struct Node {
    value: DenseTensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    sign_forward: SignForward,
    consumed: bool,
}

/// Gradients of the terminal scalar with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseTensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DenseTensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<DenseTensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch(format!("{what}: {a:?} vs {b:?}"))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_sign_forward(mut self, sign_forward: SignForward) -> Self {
        self.sign_forward = sign_forward;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseTensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: DenseTensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: DenseTensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: DenseTensor) -> Var {
        self.leaf(value, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// `x[n, f, ..] + bias[f]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if xv.order() < 2 || bv.order() != 1 || bv.len() != xv.shape()[1] {
            return Err(shape_err("bias", xv.shape(), bv.shape()));
        }
        let f = xv.shape()[1];
        let inner = xv.len() / (xv.shape()[0] * f);
        let mut out = xv.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v += bv.data()[(k / inner) % f];
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddBias { x, bias }, rg))
    }

    /// Elementwise product with a constant tensor (masks, fixed scales).
    pub fn mul_const(&mut self, x: Var, factor: DenseTensor) -> Result<Var> {
        let value = self.value(x).zip_map(&factor, |a, b| a * b)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MulConst { x, factor }, rg))
    }

    /// `t ×_mode u` with `u` an order-2 node of shape `(R, D_mode)`.
    pub fn mode_product(&mut self, t: Var, u: Var, mode: usize) -> Result<Var> {
        let um = FactorMatrix::from_tensor(self.value(u))?;
        let value = mode_product(self.value(t), &um, mode)?;
        let rg = self.rg(t) || self.rg(u);
        Ok(self.push(value, Op::ModeProduct { t, u, mode }, rg))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, geometry: ConvGeometry) -> Result<Var> {
        let value = conv2d(self.value(x), self.value(k), geometry)?;
        let rg = self.rg(x) || self.rg(k);
        Ok(self.push(value, Op::Conv2d { x, k, geometry }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Max pooling over `(N, C, H, W)` without padding. Ties go to the first
    /// (lowest-index) maximum.
    pub fn max_pool(&mut self, x: Var, kernel: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let xv = self.value(x);
        if xv.order() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "max pool expects (N, C, H, W), got {:?}",
                xv.shape()
            )));
        }
        let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let ho = crate::conv::output_size(h, kernel.0, stride.0, 0)?;
        let wo = crate::conv::output_size(w, kernel.1, stride.1, 0)?;
        let src = xv.data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * stride.0 * w + ox * stride.1;
                    for ky in 0..kernel.0 {
                        for kx in 0..kernel.1 {
                            let k = base + (oy * stride.0 + ky) * w + ox * stride.1 + kx;
                            if src[k] > src[best] {
                                best = k;
                            }
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let value = DenseTensor::new(vec![n, c, ho, wo], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MaxPool { x, argmax }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// `x · wᵀ` for `x: (N, in)` and `w: (out, in)`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.order() != 2 || wv.order() != 2 || xv.shape()[1] != wv.shape()[1] {
            return Err(shape_err("linear", xv.shape(), wv.shape()));
        }
        let (n, i, o) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
        let mut out = vec![0.0; n * o];
        gemm(n, i, o, xv.data(), false, wv.data(), true, &mut out, 0.0);
        let value = DenseTensor::new(vec![n, o], out)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(value, Op::Linear { x, w }, rg))
    }

    pub fn sign(&mut self, x: Var, variant: SteVariant) -> Var {
        let value = match self.sign_forward {
            SignForward::Hard => self.value(x).map(sgn),
            SignForward::Surrogate => self.value(x).map(|v| variant.surrogate(v)),
        };
        let rg = self.rg(x);
        self.push(value, Op::Sign { x, variant }, rg)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::abs);
        let rg = self.rg(x);
        self.push(value, Op::Abs(x), rg)
    }

    /// Mean over every axis but the first: `(F, ..) → (F,)`.
    pub fn filter_mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let f = xv.shape()[0];
        let per = xv.len() / f;
        let means = xv
            .data()
            .chunks_exact(per)
            .map(|c| c.iter().sum::<f64>() / per as f64)
            .collect();
        let value = DenseTensor::new(vec![f], means).expect("f > 0");
        let rg = self.rg(x);
        self.push(value, Op::FilterMean(x), rg)
    }

    /// Mean over channels: `(N, C, H, W) → (N, 1, H, W)`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.order() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "channel mean expects (N, C, H, W), got {:?}",
                xv.shape()
            )));
        }
        let (n, c, hw) = (xv.shape()[0], xv.shape()[1], xv.shape()[2] * xv.shape()[3]);
        let mut out = vec![0.0; n * hw];
        for s in 0..n {
            for ch in 0..c {
                let src = &xv.data()[(s * c + ch) * hw..(s * c + ch + 1) * hw];
                for (o, v) in out[s * hw..(s + 1) * hw].iter_mut().zip(src) {
                    *o += v / c as f64;
                }
            }
        }
        let value = DenseTensor::new(vec![n, 1, xv.shape()[2], xv.shape()[3]], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::ChannelMean(x), rg))
    }

    /// `x[n, f, h, w] · s[f]`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        if xv.order() != 4 || sv.order() != 1 || sv.len() != xv.shape()[1] {
            return Err(shape_err("channel scale", xv.shape(), sv.shape()));
        }
        let f = xv.shape()[1];
        let hw = xv.shape()[2] * xv.shape()[3];
        let mut out = xv.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v *= sv.data()[(k / hw) % f];
        }
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(out, Op::ScaleChannels { x, s }, rg))
    }

    /// `x[n, f, h, w] · s[n, 0, h, w]`.
    pub fn scale_spatial(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        let (xs, ss) = (xv.shape(), sv.shape());
        if xs.len() != 4 || ss.len() != 4 || ss[0] != xs[0] || ss[1] != 1 || ss[2..] != xs[2..] {
            return Err(shape_err("spatial scale", xs, ss));
        }
        let (f, hw) = (xs[1], xs[2] * xs[3]);
        let mut out = xv.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let n = k / (f * hw);
            *v *= sv.data()[n * hw + k % hw];
        }
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(out, Op::ScaleSpatial { x, s }, rg))
    }

    /// Mean softmax cross-entropy over the batch; logits are `(N, classes)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.order() != 2 || lv.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for logits {:?}",
                labels.len(),
                lv.shape()
            )));
        }
        let (n, k) = (lv.shape()[0], lv.shape()[1]);
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for (s, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(Error::InvalidLabel { label: y, classes: k });
            }
            let row = &lv.data()[s * k..(s + 1) * k];
            let (nll, p) = softmax_nll(row, y);
            loss += nll;
            probs[s * k..(s + 1) * k].copy_from_slice(&p);
        }
        let value = DenseTensor::new(vec![1], vec![loss / n as f64])?;
        let probs = DenseTensor::new(vec![n, k], probs)?;
        let rg = self.rg(logits);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// `Σ x ⊙ weights`, a scalar.
    pub fn weighted_sum(&mut self, x: Var, weights: DenseTensor) -> Result<Var> {
        let s = self.value(x).dot(&weights)?;
        let rg = self.rg(x);
        Ok(self.push(DenseTensor::new(vec![1], vec![s])?, Op::WeightedSum { x, weights }, rg))
    }

    /// Reverse sweep from the scalar `loss`. A tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<DenseTensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(DenseTensor::ones(self.value(loss).shape()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<DenseTensor>], v: Var, g: DenseTensor) -> Result<()> {
        if !self.rg(v) {
            return Ok(());
        }
        match grads[v.0].as_mut() {
            Some(acc) => acc.add_assign(&g)?,
            None => grads[v.0] = Some(g),
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &DenseTensor, grads: &mut [Option<DenseTensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::AddBias { x, bias } => {
                self.accumulate(grads, *x, g.clone())?;
                if self.rg(*bias) {
                    let f = g.shape()[1];
                    let inner = g.len() / (g.shape()[0] * f);
                    let mut db = vec![0.0; f];
                    for (k, v) in g.data().iter().enumerate() {
                        db[(k / inner) % f] += v;
                    }
                    self.accumulate(grads, *bias, DenseTensor::new(vec![f], db)?)?;
                }
            }
            Op::MulConst { x, factor } => {
                self.accumulate(grads, *x, g.zip_map(factor, |a, b| a * b)?)?;
            }
            Op::ModeProduct { t, u, mode } => {
                let um = FactorMatrix::from_tensor(self.value(*u))?;
                if self.rg(*t) {
                    self.accumulate(grads, *t, mode_product(g, &um.transpose(), *mode)?)?;
                }
                if self.rg(*u) {
                    let gy = unfold(g, *mode)?;
                    let tx = unfold(self.value(*t), *mode)?;
                    let du = gy.matmul(&tx.transpose())?;
                    self.accumulate(grads, *u, du.to_tensor())?;
                }
            }
            Op::Conv2d { x, k, geometry } => {
                let (dx, dk) = conv2d_backward(self.value(*x), self.value(*k), *geometry, g, self.rg(*x), self.rg(*k))?;
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx)?;
                }
                if let Some(dk) = dk {
                    self.accumulate(grads, *k, dk)?;
                }
            }
            Op::Relu(x) => {
                let d = g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })?;
                self.accumulate(grads, *x, d)?;
            }
            Op::MaxPool { x, argmax } => {
                let mut d = DenseTensor::zeros(self.value(*x).shape());
                for (gv, &k) in g.data().iter().zip(argmax) {
                    d.data_mut()[k] += gv;
                }
                self.accumulate(grads, *x, d)?;
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, g.reshape(self.value(*x).shape())?)?;
            }
            Op::Linear { x, w } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, i, o) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
                if self.rg(*x) {
                    let mut dx = vec![0.0; n * i];
                    gemm(n, o, i, g.data(), false, wv.data(), false, &mut dx, 0.0);
                    self.accumulate(grads, *x, DenseTensor::new(vec![n, i], dx)?)?;
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0; o * i];
                    gemm(o, n, i, g.data(), true, xv.data(), false, &mut dw, 0.0);
                    self.accumulate(grads, *w, DenseTensor::new(vec![o, i], dw)?)?;
                }
            }
            Op::Sign { x, variant } => {
                let d = g.zip_map(self.value(*x), |gv, xv| gv * ste_derivative(xv, *variant))?;
                self.accumulate(grads, *x, d)?;
            }
            Op::Abs(x) => {
                let d = g.zip_map(self.value(*x), |gv, xv| gv * xv.signum())?;
                self.accumulate(grads, *x, d)?;
            }
            Op::FilterMean(x) => {
                let shape = self.value(*x).shape().to_vec();
                let per = self.value(*x).len() / shape[0];
                let d = DenseTensor::from_fn(&shape, |i| g.data()[i[0]] / per as f64);
                self.accumulate(grads, *x, d)?;
            }
            Op::ChannelMean(x) => {
                let shape = self.value(*x).shape().to_vec();
                let c = shape[1] as f64;
                let d = DenseTensor::from_fn(&shape, |i| g.get(&[i[0], 0, i[2], i[3]]) / c);
                self.accumulate(grads, *x, d)?;
            }
            Op::ScaleChannels { x, s } => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let f = xv.shape()[1];
                let hw = xv.shape()[2] * xv.shape()[3];
                if self.rg(*x) {
                    let mut dx = g.clone();
                    for (k, v) in dx.data_mut().iter_mut().enumerate() {
                        *v *= sv.data()[(k / hw) % f];
                    }
                    self.accumulate(grads, *x, dx)?;
                }
                if self.rg(*s) {
                    let mut ds = vec![0.0; f];
                    for (k, (gv, xv)) in g.data().iter().zip(xv.data()).enumerate() {
                        ds[(k / hw) % f] += gv * xv;
                    }
                    self.accumulate(grads, *s, DenseTensor::new(vec![f], ds)?)?;
                }
            }
            Op::ScaleSpatial { x, s } => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let (f, hw) = (xv.shape()[1], xv.shape()[2] * xv.shape()[3]);
                if self.rg(*x) {
                    let mut dx = g.clone();
                    for (k, v) in dx.data_mut().iter_mut().enumerate() {
                        *v *= sv.data()[(k / (f * hw)) * hw + k % hw];
                    }
                    self.accumulate(grads, *x, dx)?;
                }
                if self.rg(*s) {
                    let mut ds = DenseTensor::zeros(sv.shape());
                    for (k, (gv, xv)) in g.data().iter().zip(xv.data()).enumerate() {
                        ds.data_mut()[(k / (f * hw)) * hw + k % hw] += gv * xv;
                    }
                    self.accumulate(grads, *s, ds)?;
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let n = labels.len();
                let k = probs.shape()[1];
                let scale = g.data()[0] / n as f64;
                let mut d = probs.scale(scale);
                for (s, &y) in labels.iter().enumerate() {
                    d.data_mut()[s * k + y] -= scale;
                }
                self.accumulate(grads, *logits, d)?;
            }
            Op::WeightedSum { x, weights } => {
                self.accumulate(grads, *x, weights.scale(g.data()[0]))?;
            }
        }
        Ok(())
    }
}

/// `−log softmax(row)[label]` with max subtraction, plus the softmax itself.
pub(crate) fn softmax_nll(row: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let nll = total.ln() - (row[label] - max);
    (nll, exps.into_iter().map(|e| e / total).collect())
}
