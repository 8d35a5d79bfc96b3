//! Reverse-mode automatic differentiation over tensor operations.
//!
//! A [`Tape`] records every operation of one forward pass in topological
//! order. [`Tape::backward`] walks the records in reverse and accumulates
//! adjoints. The tape is generic over [`Real`], so the same graph evaluated on
//! [`crate::tensor::Dual`] numbers yields directional derivatives of the
//! gradient, i.e. Hessian-vector products.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Batch-norm variance epsilon.
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf { offset: Option<usize> },
    Linear { x: Var, w: Var },
    AddBias { x: Var, b: Var },
    Relu { x: Var },
    Conv2d { x: Var, w: Var, stride: usize, pad: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, train: bool },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Sum { x: Var },
    Scale { x: Var, c: f64 },
    Reshape { x: Var },
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    /// Batch-norm intermediates: normalized input and per-channel 1/σ.
    saved: Option<(Vec<T>, Vec<T>)>,
}

/// Per-channel statistics of a training-mode batch-norm call.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, the convention used for running buffers.
    pub var: Vec<f64>,
}

pub struct Tape<T: Real = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by one backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    leaves: Vec<(Option<usize>, usize)>,
}

impl<T: Real> Gradients<T> {
    pub fn of(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Scatters the adjoints of parameter leaves into a flat vector of length `dim`.
    pub fn param_gradient(&self, dim: usize) -> Vec<T> {
        let mut out = vec![T::zero(); dim];
        for (node, &(offset, len)) in self.leaves.iter().enumerate() {
            let (Some(offset), Some(g)) = (offset, self.grads[node].as_ref()) else {
                continue;
            };
            for (o, &gv) in out[offset..offset + len].iter_mut().zip(g) {
                *o += gv;
            }
        }
        out
    }
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{what}: {a:?} vs {b:?}"))
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        self.nodes.push(Node { value, op, saved: None });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf { offset: None })
    }

    /// A trainable leaf whose adjoint lands at `offset..offset+len` of the flat gradient.
    pub fn param(&mut self, value: Tensor<T>, offset: usize) -> Var {
        self.push(value, Op::Leaf { offset: Some(offset) })
    }

    /// `y[n, o] = Σ_i x[n, i] · w[o, i]`; `x` is flattened past its leading axis.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let n = xv.rows();
        let fan_in = if xv.shape().is_empty() { 1 } else { xv.len() / n };
        if wv.shape().len() != 2 || wv.shape()[1] != fan_in {
            return Err(shape_err("linear input vs weight", xv.shape(), wv.shape()));
        }
        let out = wv.shape()[0];
        let (xd, wd) = (xv.data(), wv.data());
        let mut y = vec![T::zero(); n * out];
        for s in 0..n {
            let xr = &xd[s * fan_in..(s + 1) * fan_in];
            for o in 0..out {
                let wr = &wd[o * fan_in..(o + 1) * fan_in];
                let mut acc = T::zero();
                for (&a, &b) in xr.iter().zip(wr) {
                    acc += a * b;
                }
                y[s * out + o] = acc;
            }
        }
        let value = Tensor::new(vec![n, out], y)?;
        Ok(self.push(value, Op::Linear { x, w }))
    }

    /// Adds `b[c]` along axis 1.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let bv = &self.nodes[b.0].value;
        if xv.shape().len() < 2 || xv.shape()[1] != bv.len() {
            return Err(shape_err("bias", xv.shape(), bv.shape()));
        }
        let (n, c) = (xv.shape()[0], xv.shape()[1]);
        let inner = xv.len() / (n * c);
        let mut y = xv.clone();
        let bd = bv.data();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            *v += bd[(i / inner) % c];
        }
        Ok(self.push(y, Op::AddBias { x, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.nodes[x.0].value.map(|v| if v.value() > 0.0 { v } else { T::zero() });
        self.push(y, Op::Relu { x })
    }

    /// 2D convolution, `x: [N, C, H, W]`, `w: [O, C, k, k]`, zero padding `pad`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let (xs, ws) = (xv.shape(), wv.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] || stride == 0 {
            return Err(shape_err("conv2d input vs kernel", xs, ws));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, k) = (ws[0], ws[2]);
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(shape_err("conv2d kernel larger than padded input", xs, ws));
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let (xd, kd) = (xv.data(), wv.data());
        let mut y = vec![T::zero(); n * o * oh * ow];
        for s in 0..n {
            for oc in 0..o {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = T::zero();
                        for ic in 0..c {
                            for a in 0..k {
                                let r = (i * stride + a) as isize - pad as isize;
                                if r < 0 || r >= h as isize {
                                    continue;
                                }
                                for b in 0..k {
                                    let q = (j * stride + b) as isize - pad as isize;
                                    if q < 0 || q >= wd as isize {
                                        continue;
                                    }
                                    let xi = ((s * c + ic) * h + r as usize) * wd + q as usize;
                                    let wi = ((oc * c + ic) * k + a) * k + b;
                                    acc += xd[xi] * kd[wi];
                                }
                            }
                        }
                        y[((s * o + oc) * oh + i) * ow + j] = acc;
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, o, oh, ow], y)?;
        Ok(self.push(value, Op::Conv2d { x, w, stride, pad }))
    }

    /// Training-mode batch norm over axis 1 using batch statistics.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats)> {
        let (c, inner, n) = self.bn_dims(x, gamma, beta)?;
        let count = n * inner;
        if count < 2 {
            return Err(Error::Shape("batch norm in training mode needs at least 2 values per channel".into()));
        }
        let xd = self.nodes[x.0].value.data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let m = T::from_f64(count as f64);
        for ch in 0..c {
            let mut acc = T::zero();
            for s in 0..n {
                for e in 0..inner {
                    acc += xd[(s * c + ch) * inner + e];
                }
            }
            mean[ch] = acc / m;
            let mut sq = T::zero();
            for s in 0..n {
                for e in 0..inner {
                    let d = xd[(s * c + ch) * inner + e] - mean[ch];
                    sq += d * d;
                }
            }
            var[ch] = sq / m;
        }
        let stats = BatchStats {
            mean: mean.iter().map(|v| v.value()).collect(),
            var: var.iter().map(|v| v.value() * count as f64 / (count as f64 - 1.0)).collect(),
        };
        let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + T::from_f64(BN_EPS)).sqrt()).collect();
        let out = self.bn_apply(x, gamma, beta, &mean, &inv, c, inner, n, true);
        Ok((out, stats))
    }

    /// Inference-mode batch norm with fixed (non-differentiable) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> Result<Var> {
        let (c, inner, n) = self.bn_dims(x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::Shape(format!("running statistics for {} channels, expected {c}", running_mean.len())));
        }
        let mean: Vec<T> = running_mean.iter().map(|&v| T::from_f64(v)).collect();
        let inv: Vec<T> = running_var.iter().map(|&v| T::one() / T::from_f64(v + BN_EPS).sqrt()).collect();
        Ok(self.bn_apply(x, gamma, beta, &mean, &inv, c, inner, n, false))
    }

    fn bn_dims(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let xs = self.nodes[x.0].value.shape();
        let g = self.nodes[gamma.0].value.len();
        let b = self.nodes[beta.0].value.len();
        if xs.len() < 2 || xs[1] != g || g != b {
            return Err(shape_err("batch norm input vs scale", xs, &[g, b]));
        }
        let n = xs[0];
        let c = xs[1];
        let inner = self.nodes[x.0].value.len() / (n * c).max(1);
        Ok((c, inner, n))
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv: &[T],
        c: usize,
        inner: usize,
        n: usize,
        train: bool,
    ) -> Var {
        let xv = &self.nodes[x.0].value;
        let gd = self.nodes[gamma.0].value.data();
        let bd = self.nodes[beta.0].value.data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut y = xv.clone();
        for s in 0..n {
            for ch in 0..c {
                for e in 0..inner {
                    let i = (s * c + ch) * inner + e;
                    let h = (xv.data()[i] - mean[ch]) * inv[ch];
                    xhat[i] = h;
                    y.data_mut()[i] = gd[ch] * h + bd[ch];
                }
            }
        }
        let v = self.push(y, Op::BatchNorm { x, gamma, beta, train });
        self.nodes[v.0].saved = Some((xhat, inv.to_vec()));
        v
    }

    /// 2×2 max pooling with stride 2 over the last two axes of `[N, C, H, W]`.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let xs = xv.shape();
        if xs.len() != 4 || xs[2] < 2 || xs[3] < 2 {
            return Err(Error::Shape(format!("max pool needs [N, C, H>=2, W>=2], got {xs:?}")));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oh, ow) = (h / 2, w / 2);
        let mut y = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        let xd = xv.data();
        for plane in 0..n * c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = plane * h * w + 2 * i * w + 2 * j;
                    for (a, b) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = plane * h * w + (2 * i + a) * w + 2 * j + b;
                        if xd[idx].value() > xd[best].value() {
                            best = idx;
                        }
                    }
                    y.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], y)?;
        Ok(self.push(value, Op::MaxPool2 { x, argmax }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&p, &q)| p + q).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.len() != bv.len() {
            return Err(shape_err("mul", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&p, &q)| p * q).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul { a, b }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let mut acc = T::zero();
        for &v in self.nodes[x.0].value.data() {
            acc += v;
        }
        self.push(Tensor::scalar(acc), Op::Sum { x })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let k = T::from_f64(c);
        let y = self.nodes[x.0].value.map(|v| v * k);
        self.push(y, Op::Scale { x, c })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let y = self.nodes[x.0].value.clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape { x }))
    }

    /// Mean softmax cross-entropy of `logits: [N, K]` against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = &self.nodes[logits.0].value;
        if lv.shape().len() != 2 || lv.shape()[0] != labels.len() {
            return Err(Error::Shape(format!(
                "logits {:?} vs {} labels",
                lv.shape(),
                labels.len()
            )));
        }
        let k = lv.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Shape(format!("label {bad} out of range for {k} classes")));
        }
        let mut total = T::zero();
        for (s, &y) in labels.iter().enumerate() {
            let row = &lv.data()[s * k..(s + 1) * k];
            let (lse, _) = log_softmax_row(row);
            total += lse - row[y];
        }
        let loss = total / T::from_f64(labels.len() as f64);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec() }))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::Tape("backward called before any forward pass".into()));
        }
        let root = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Tape(format!("node {} is not on this tape", loss.0)))?;
        if root.value.len() != 1 {
            return Err(Error::Tape(format!("loss must be scalar, got shape {:?}", root.value.shape())));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf { .. } => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Linear { x, w } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let n = xv.rows();
                    let fan_in = xv.len() / n;
                    let out = wv.shape()[0];
                    let mut gx = vec![T::zero(); xv.len()];
                    let mut gw = vec![T::zero(); wv.len()];
                    for s in 0..n {
                        for o in 0..out {
                            let go = g[s * out + o];
                            for i in 0..fan_in {
                                gx[s * fan_in + i] += go * wv.data()[o * fan_in + i];
                                gw[o * fan_in + i] += go * xv.data()[s * fan_in + i];
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                }
                Op::AddBias { x, b } => {
                    let xs = node.value.shape();
                    let (n, c) = (xs[0], xs[1]);
                    let inner = node.value.len() / (n * c);
                    let mut gb = vec![T::zero(); c];
                    for (i, &gv) in g.iter().enumerate() {
                        gb[(i / inner) % c] += gv;
                    }
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *x, g);
                }
                Op::Relu { x } => {
                    let xv = self.nodes[x.0].value.data();
                    let gx = g
                        .iter()
                        .zip(xv)
                        .map(|(&gv, &xi)| if xi.value() > 0.0 { gv } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, *x, gx);
                }
                Op::Conv2d { x, w, stride, pad } => {
                    let (gx, gw) = conv2d_backward(
                        &self.nodes[x.0].value,
                        &self.nodes[w.0].value,
                        node.value.shape(),
                        &g,
                        *stride,
                        *pad,
                    );
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                }
                Op::BatchNorm { x, gamma, beta, train } => {
                    let (xhat, inv) = node.saved.as_ref().expect("batch norm saves intermediates");
                    let xs = node.value.shape();
                    let (n, c) = (xs[0], xs[1]);
                    let inner = node.value.len() / (n * c);
                    let gd = self.nodes[gamma.0].value.data();
                    let mut gg = vec![T::zero(); c];
                    let mut gb = vec![T::zero(); c];
                    for s in 0..n {
                        for ch in 0..c {
                            for e in 0..inner {
                                let i = (s * c + ch) * inner + e;
                                gb[ch] += g[i];
                                gg[ch] += g[i] * xhat[i];
                            }
                        }
                    }
                    let mut gx = vec![T::zero(); g.len()];
                    let m = T::from_f64((n * inner) as f64);
                    for s in 0..n {
                        for ch in 0..c {
                            for e in 0..inner {
                                let i = (s * c + ch) * inner + e;
                                gx[i] = if *train {
                                    gd[ch] * inv[ch] / m * (m * g[i] - gb[ch] - xhat[i] * gg[ch])
                                } else {
                                    g[i] * gd[ch] * inv[ch]
                                };
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gamma, gg);
                    accumulate(&mut grads, *beta, gb);
                }
                Op::MaxPool2 { x, argmax } => {
                    let mut gx = vec![T::zero(); self.nodes[x.0].value.len()];
                    for (&src, &gv) in argmax.iter().zip(&g) {
                        gx[src] += gv;
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Mul { a, b } => {
                    let (av, bv) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                    let ga = g.iter().zip(bv).map(|(&gv, &q)| gv * q).collect();
                    let gb = g.iter().zip(av).map(|(&gv, &p)| gv * p).collect();
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Sum { x } => {
                    let n = self.nodes[x.0].value.len();
                    accumulate(&mut grads, *x, vec![g[0]; n]);
                }
                Op::Scale { x, c } => {
                    let k = T::from_f64(*c);
                    accumulate(&mut grads, *x, g.iter().map(|&v| v * k).collect());
                }
                Op::Reshape { x } => accumulate(&mut grads, *x, g),
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    let lv = &self.nodes[logits.0].value;
                    let k = lv.shape()[1];
                    let scale = g[0] / T::from_f64(labels.len() as f64);
                    let mut gl = vec![T::zero(); lv.len()];
                    for (s, &y) in labels.iter().enumerate() {
                        let row = &lv.data()[s * k..(s + 1) * k];
                        let (lse, _) = log_softmax_row(row);
                        for j in 0..k {
                            let p = (row[j] - lse).exp();
                            let t = if j == y { T::one() } else { T::zero() };
                            gl[s * k + j] = scale * (p - t);
                        }
                    }
                    accumulate(&mut grads, *logits, gl);
                }
            }
        }

        let leaves = self
            .nodes
            .iter()
            .map(|n| match n.op {
                Op::Leaf { offset } => (offset, n.value.len()),
                _ => (None, 0),
            })
            .collect();
        Ok(Gradients { grads, leaves })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Returns `(logsumexp(row), argmax)`, shifted by the primal maximum.
pub(crate) fn log_softmax_row<T: Real>(row: &[T]) -> (T, usize) {
    let mut best = 0;
    for (j, v) in row.iter().enumerate() {
        if v.value() > row[best].value() {
            best = j;
        }
    }
    let m = row[best];
    let mut acc = T::zero();
    for &v in row {
        acc += (v - m).exp();
    }
    (m + acc.ln(), best)
}

fn conv2d_backward<T: Real>(
    xv: &Tensor<T>,
    wv: &Tensor<T>,
    ys: &[usize],
    g: &[T],
    stride: usize,
    pad: usize,
) -> (Vec<T>, Vec<T>) {
    let xs = xv.shape();
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (o, k) = (wv.shape()[0], wv.shape()[2]);
    let (oh, ow) = (ys[2], ys[3]);
    let (xd, kd) = (xv.data(), wv.data());
    let mut gx = vec![T::zero(); xv.len()];
    let mut gw = vec![T::zero(); wv.len()];
    for s in 0..n {
        for oc in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let go = g[((s * o + oc) * oh + i) * ow + j];
                    for ic in 0..c {
                        for a in 0..k {
                            let r = (i * stride + a) as isize - pad as isize;
                            if r < 0 || r >= h as isize {
                                continue;
                            }
                            for b in 0..k {
                                let q = (j * stride + b) as isize - pad as isize;
                                if q < 0 || q >= wd as isize {
                                    continue;
                                }
                                let xi = ((s * c + ic) * h + r as usize) * wd + q as usize;
                                let wi = ((oc * c + ic) * k + a) * k + b;
                                gx[xi] += go * kd[wi];
                                gw[wi] += go * xd[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dual;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let mut tape = Tape::<f64>::new();
        let theta = tape.param(t(&[2], &[1.0, 2.0]), 0);
        let sq = tape.mul(theta, theta).unwrap();
        let s = tape.sum(sq);
        let loss = tape.scale(s, 0.5);
        let g = tape.backward(loss).unwrap().param_gradient(2);
        assert_eq!(g, vec![1.0, 2.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let _theta = tape.param(t(&[3], &[1.0, -2.0, 0.5]), 0);
        let c = tape.constant(t(&[2], &[4.0, 5.0]));
        let loss = tape.sum(c);
        let g = tape.backward(loss).unwrap().param_gradient(3);
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn backward_on_empty_tape_errors() {
        let tape = Tape::<f64>::new();
        assert!(matches!(tape.backward(Var(0)), Err(Error::Tape(_))));
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]), 0);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = tape.param(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), 0);
        let b = tape.param(t(&[2], &[0.0, 0.0]), 4);
        let y = tape.linear(x, w).unwrap();
        let y = tape.add_bias(y, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn linear_reports_dimensions_on_mismatch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let w = tape.param(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), 0);
        let err = tape.linear(x, w).unwrap_err().to_string();
        assert!(err.contains("[1, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn diagonal_quadratic_hvp_through_dual_tape() {
        // L = ½ θᵀAθ, A = diag(3, -1); Hv with v = (1, 1) is (3, -1).
        let a = t(&[2, 2], &[3.0, 0.0, 0.0, -1.0]).lift::<Dual>();
        let theta = Tensor::new(vec![1, 2], vec![Dual::new(0.3, 1.0), Dual::new(-0.7, 1.0)]).unwrap();
        let mut tape = Tape::<Dual>::new();
        let th = tape.param(theta, 0);
        let am = tape.constant(a);
        let ath = tape.linear(th, am).unwrap();
        let prod = tape.mul(th, ath).unwrap();
        let s = tape.sum(prod);
        let loss = tape.scale(s, 0.5);
        let g = tape.backward(loss).unwrap().param_gradient(2);
        let hv: Vec<f64> = g.iter().map(|d| d.eps).collect();
        assert_eq!(hv, vec![3.0, -1.0]);
        assert!((g[0].re - 0.9).abs() < 1e-15);
    }

    #[test]
    fn softmax_cross_entropy_of_uniform_logits_is_log_k() {
        let mut tape = Tape::<f64>::new();
        let z = tape.param(t(&[2, 4], &[0.0; 8]), 0);
        let loss = tape.softmax_cross_entropy(z, &[1, 3]).unwrap();
        assert!((tape.value(loss).data()[0] - 4f64.ln()).abs() < 1e-15);
        let g = tape.backward(loss).unwrap().param_gradient(8);
        // (p - onehot) / N
        assert!((g[1] - (0.25 - 1.0) / 2.0).abs() < 1e-15);
        assert!((g[0] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn conv_identity_kernel_copies_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = tape.param(t(&[1, 1, 3, 3], &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]), 0);
        let y = tape.conv2d(x, w, 1, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 2, 2]);
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[1, 1, 2, 2], &[1.0, 5.0, 3.0, 4.0]), 0);
        let y = tape.max_pool2(x).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap().param_gradient(4);
        assert_eq!(g, vec![0.0, 1.0, 0.0, 0.0]);
    }
}
