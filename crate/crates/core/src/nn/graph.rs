//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every value produced during a forward pass together
//! with the operation that made it. [`Graph::backward`] walks the tape in
//! reverse and returns gradients for the leaves that asked for them.

use super::conv::{self, ConvGeom, ConvShapes};
use super::pool;
use super::tensor::{Real, Tensor};
use crate::loss::{mse_points_grad, multiclass_tversky_grad, TverskyParams};
use crate::{Error, Result};

const NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    AvgPool {
        x: Var,
        kernel: usize,
        stride: usize,
    },
    Upsample2(Var),
    Relu(Var),
    Mish(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    Add(Var, Var),
    ChannelNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Sum(Var),
    Scale(Var, T),
    WeightedSum(Vec<(Var, T)>),
    Tversky {
        probs: Var,
        grad: Vec<T>,
    },
    Mse {
        pred: Var,
        grad: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to the graph's differentiable leaves.
#[derive(Debug)]
pub struct Gradients<T> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`, or `None` if `v` does not influence the loss or
    /// was recorded without gradient tracking.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.slots.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.slots.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else if x < -20.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// `x·tanh(softplus(x))`, stable for large |x|.
pub fn mish_scalar(x: f64) -> f64 {
    x * softplus(x).tanh()
}

fn mish_derivative(x: f64) -> f64 {
    let sp = softplus(x);
    let t = sp.tanh();
    let sig = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    t + x * (1.0 - t * t) * sig
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
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

    /// Constant data; no gradient is computed for it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims5(&self, v: Var) -> Result<[usize; 5]> {
        self.nodes[v.0].value.dims5()
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let s = ConvShapes::new(self.dims5(x)?, self.shape(w), geom)?;
        if let Some(b) = b {
            if self.shape(b) != [s.o] {
                return Err(Error::Shape(format!(
                    "bias shape {:?}, expected [{}]",
                    self.shape(b),
                    s.o
                )));
            }
        }
        let y = conv::forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &s,
        );
        let shape = vec![s.n, s.o, s.out[0], s.out[1], s.out[2]];
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new(shape, y)?, Op::Conv { x, w, b, geom }, rg))
    }

    pub fn max_pool3d(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let (y, argmax, dims) = pool::max_pool(
            self.value(x).data(),
            self.dims5(x)?,
            ConvGeom::new(kernel, stride, pad),
        )?;
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(dims.to_vec(), y)?,
            Op::MaxPool { x, argmax },
            rg,
        ))
    }

    pub fn avg_pool3d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let (y, dims) = pool::avg_pool(self.value(x).data(), self.dims5(x)?, kernel, stride)?;
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(dims.to_vec(), y)?,
            Op::AvgPool { x, kernel, stride },
            rg,
        ))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (y, dims) = pool::upsample2(self.value(x).data(), self.dims5(x)?);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(dims.to_vec(), y)?, Op::Upsample2(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(x);
        self.push(y, Op::Relu(x), rg)
    }

    pub fn mish(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| T::lit(mish_scalar(v.as_f64())));
        let rg = self.rg(x);
        self.push(y, Op::Mish(x), rg)
    }

    /// Softmax across the channel axis of an `[N, C, ...]` tensor.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::Shape(format!(
                "softmax needs [N, C, ...], got {shape:?}"
            )));
        }
        let (n, c) = (shape[0], shape[1]);
        let sp: usize = shape[2..].iter().product();
        let xv = self.value(x).data();
        let mut y = vec![T::zero(); xv.len()];
        for b in 0..n {
            let off = b * c * sp;
            for i in 0..sp {
                let mut m = T::neg_infinity();
                for k in 0..c {
                    m = m.max(xv[off + k * sp + i]);
                }
                let mut s = T::zero();
                for k in 0..c {
                    let e = (xv[off + k * sp + i] - m).exp();
                    y[off + k * sp + i] = e;
                    s += e;
                }
                let inv = T::one() / s;
                for k in 0..c {
                    y[off + k * sp + i] *= inv;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, y)?, Op::Softmax(x), rg))
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let s0 = self.shape(*first).to_vec();
        if s0.len() < 2 {
            return Err(Error::Shape(format!(
                "concat needs [N, C, ...], got {s0:?}"
            )));
        }
        let mut channels = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != s0.len() || s[0] != s0[0] || s[2..] != s0[2..] {
                return Err(Error::Shape(format!("concat mismatch {s:?} vs {s0:?}")));
            }
            channels += s[1];
        }
        let n = s0[0];
        let sp: usize = s0[2..].iter().product();
        let mut y = Vec::with_capacity(n * channels * sp);
        for b in 0..n {
            for &v in xs {
                let c = self.shape(v)[1];
                y.extend_from_slice(&self.value(v).data()[b * c * sp..(b + 1) * c * sp]);
            }
        }
        let mut shape = s0;
        shape[1] = channels;
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::new(shape, y)?, Op::Concat(xs.to_vec()), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "add {:?} + {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let y: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p + q)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, y)?, Op::Add(a, b), rg))
    }

    /// Per-sample, per-channel normalisation over the spatial axes followed
    /// by a learnable affine map.
    pub fn channel_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let [n, c, d, h, w] = self.dims5(x)?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::Shape(format!("norm affine must be [{c}]")));
        }
        let sp = d * h * w;
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut y = vec![T::zero(); xv.len()];
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = Vec::with_capacity(n * c);
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * sp;
                let s = &xv[off..off + sp];
                let mean = s.iter().map(|v| v.as_f64()).sum::<f64>() / sp as f64;
                let var = s.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / sp as f64;
                let is = 1.0 / (var + NORM_EPS).sqrt();
                inv_std.push(T::lit(is));
                let (mean, is) = (T::lit(mean), T::lit(is));
                for i in 0..sp {
                    let xh = (s[i] - mean) * is;
                    xhat[off + i] = xh;
                    y[off + i] = g[ch] * xh + bt[ch];
                }
            }
        }
        let shape = vec![n, c, d, h, w];
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(shape, y)?,
            Op::ChannelNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// `[N, C, D, H, W] → [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, d, h, w] = self.dims5(x)?;
        let sp = d * h * w;
        let inv = T::one() / T::lit(sp as f64);
        let y = self
            .value(x)
            .data()
            .chunks(sp)
            .map(|ch| ch.iter().copied().sum::<T>() * inv)
            .collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n, c], y)?, Op::GlobalAvgPool(x), rg))
    }

    /// `y = x·Wᵀ + b` with `x: [N, F]`, `w: [O, F]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bs != [ws[0]] {
            return Err(Error::Shape(format!("linear {xs:?} by {ws:?} + {bs:?}")));
        }
        let (n, f, o) = (xs[0], xs[1], ws[0]);
        let mut y: Vec<T> = (0..n)
            .flat_map(|_| self.value(b).data().iter().copied())
            .collect();
        super::tensor::gemm(
            n,
            f,
            o,
            T::one(),
            super::tensor::MatRef::new(self.value(x).data(), 0, f, 1),
            super::tensor::MatRef::new(self.value(w).data(), 0, 1, f),
            T::one(),
            &mut y,
            0,
            o,
            1,
        );
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, o], y)?, Op::Linear { x, w, b }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let s = T::lit(s);
        let y = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        self.push(y, Op::Scale(x, s), rg)
    }

    /// `Σ wᵢ·xᵢ` over same-shaped tensors.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let (v0, _) = *terms
            .first()
            .ok_or_else(|| Error::Shape("empty weighted sum".into()))?;
        let shape = self.shape(v0).to_vec();
        let mut y = vec![T::zero(); self.value(v0).len()];
        for &(v, wt) in terms {
            if self.shape(v) != &shape[..] {
                return Err(Error::Shape("weighted sum of mismatched shapes".into()));
            }
            let wt = T::lit(wt);
            for (a, &b) in y.iter_mut().zip(self.value(v).data()) {
                *a += wt * b;
            }
        }
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        let ops = terms.iter().map(|&(v, w)| (v, T::lit(w))).collect();
        Ok(self.push(Tensor::new(shape, y)?, Op::WeightedSum(ops), rg))
    }

    /// Multi-class Tversky loss of `[N, 3, D, H, W]` probabilities against a
    /// one-hot target of the same shape, averaged over the batch.
    pub fn tversky_loss(
        &mut self,
        probs: Var,
        target: &Tensor<T>,
        params: &TverskyParams,
    ) -> Result<Var> {
        let shape = self.shape(probs).to_vec();
        if shape.len() < 2 || shape[1] != 3 || target.shape() != &shape[..] {
            return Err(Error::Shape(format!(
                "tversky needs matching [N, 3, ...] inputs, got {shape:?} and {:?}",
                target.shape()
            )));
        }
        let n = shape[0];
        let per = target.len() / n;
        let inv_n = 1.0 / n as f64;
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(target.len());
        for b in 0..n {
            let r = b * per..(b + 1) * per;
            let (l, g) = multiclass_tversky_grad(
                &target.data()[r.clone()],
                &self.value(probs).data()[r],
                params,
            )?;
            loss += l * inv_n;
            grad.extend(g.into_iter().map(|v| v * T::lit(inv_n)));
        }
        let rg = self.rg(probs);
        Ok(self.push(
            Tensor::scalar(T::lit(loss)),
            Op::Tversky { probs, grad },
            rg,
        ))
    }

    /// Mean squared error against a constant target of the same shape.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        if target.shape() != self.shape(pred) {
            return Err(Error::Shape(format!(
                "mse target {:?} vs prediction {:?}",
                target.shape(),
                self.shape(pred)
            )));
        }
        let (l, grad) = mse_points_grad(self.value(pred).data(), target.data())?;
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(T::lit(l)), Op::Mse { pred, grad }, rg))
    }

    /// Reverse pass from a scalar. Intermediate gradients are released as
    /// soon as they have been propagated; leaf gradients are kept.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward from non-scalar {:?}",
                self.shape(loss)
            )));
        }
        let mut slots: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(Gradients { slots });
        }
        slots[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = slots[i].take() else { continue };
            self.propagate(node, &dy, &mut slots)?;
        }
        Ok(Gradients { slots })
    }

    fn accumulate(&self, slots: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut slots[v.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, dy: &[T], slots: &mut [Option<Vec<T>>]) -> Result<()> {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let s = ConvShapes::new(self.dims5(*x)?, self.shape(*w), *geom)?;
                if self.rg(*w) || b.is_some_and(|b| self.rg(b)) {
                    let mut dw = vec![T::zero(); self.value(*w).len()];
                    let mut db = b.map(|_| vec![T::zero(); s.o]);
                    conv::backward_weights(val(*x), dy, &s, &mut dw, db.as_deref_mut());
                    self.accumulate(slots, *w, dw);
                    if let (Some(b), Some(db)) = (b, db) {
                        self.accumulate(slots, *b, db);
                    }
                }
                if self.rg(*x) {
                    let dx = conv::backward_input(dy, val(*w), &s);
                    self.accumulate(slots, *x, dx);
                }
            }
            Op::MaxPool { x, argmax } => {
                let dx = pool::max_pool_backward(dy, argmax, self.value(*x).len());
                self.accumulate(slots, *x, dx);
            }
            Op::AvgPool { x, kernel, stride } => {
                let dx = pool::avg_pool_backward(dy, self.dims5(*x)?, *kernel, *stride);
                self.accumulate(slots, *x, dx);
            }
            Op::Upsample2(x) => {
                let dx = pool::upsample2_backward(dy, self.dims5(*x)?);
                self.accumulate(slots, *x, dx);
            }
            Op::Relu(x) => {
                let dx = val(*x)
                    .iter()
                    .zip(dy)
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate(slots, *x, dx);
            }
            Op::Mish(x) => {
                let dx = val(*x)
                    .iter()
                    .zip(dy)
                    .map(|(&v, &g)| g * T::lit(mish_derivative(v.as_f64())))
                    .collect();
                self.accumulate(slots, *x, dx);
            }
            Op::Softmax(x) => {
                let shape = node.value.shape();
                let (n, c) = (shape[0], shape[1]);
                let sp: usize = shape[2..].iter().product();
                let y = node.value.data();
                let mut dx = vec![T::zero(); y.len()];
                for b in 0..n {
                    let off = b * c * sp;
                    for i in 0..sp {
                        let mut dot = T::zero();
                        for k in 0..c {
                            dot += y[off + k * sp + i] * dy[off + k * sp + i];
                        }
                        for k in 0..c {
                            let j = off + k * sp + i;
                            dx[j] = y[j] * (dy[j] - dot);
                        }
                    }
                }
                self.accumulate(slots, *x, dx);
            }
            Op::Concat(xs) => {
                let shape = node.value.shape();
                let (n, total) = (shape[0], shape[1]);
                let sp: usize = shape[2..].iter().product();
                let mut c0 = 0;
                for &v in xs {
                    let c = self.shape(v)[1];
                    if self.rg(v) {
                        let mut g = Vec::with_capacity(n * c * sp);
                        for b in 0..n {
                            let off = (b * total + c0) * sp;
                            g.extend_from_slice(&dy[off..off + c * sp]);
                        }
                        self.accumulate(slots, v, g);
                    }
                    c0 += c;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(slots, *a, dy.to_vec());
                self.accumulate(slots, *b, dy.to_vec());
            }
            Op::ChannelNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let [n, c, d, h, w] = self.dims5(*x)?;
                let sp = d * h * w;
                let g = val(*gamma);
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); dy.len()];
                let m = T::lit(sp as f64);
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * sp;
                        let dys = &dy[off..off + sp];
                        let xh = &xhat[off..off + sp];
                        let mut s_dy = T::zero();
                        let mut s_dyxh = T::zero();
                        for i in 0..sp {
                            s_dy += dys[i];
                            s_dyxh += dys[i] * xh[i];
                        }
                        dgamma[ch] += s_dyxh;
                        dbeta[ch] += s_dy;
                        let k = g[ch] * inv_std[b * c + ch] / m;
                        for i in 0..sp {
                            dx[off + i] = k * (m * dys[i] - s_dy - xh[i] * s_dyxh);
                        }
                    }
                }
                self.accumulate(slots, *gamma, dgamma);
                self.accumulate(slots, *beta, dbeta);
                self.accumulate(slots, *x, dx);
            }
            Op::GlobalAvgPool(x) => {
                let sp: usize = self.shape(*x)[2..].iter().product();
                let inv = T::one() / T::lit(sp as f64);
                let dx = dy
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g * inv, sp))
                    .collect();
                self.accumulate(slots, *x, dx);
            }
            Op::Linear { x, w, b } => {
                let (n, f) = (self.shape(*x)[0], self.shape(*x)[1]);
                let o = self.shape(*w)[0];
                use super::tensor::{gemm, MatRef};
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); o * f];
                    gemm(
                        o,
                        n,
                        f,
                        T::one(),
                        MatRef::new(dy, 0, 1, o),
                        MatRef::new(val(*x), 0, f, 1),
                        T::zero(),
                        &mut dw,
                        0,
                        f,
                        1,
                    );
                    self.accumulate(slots, *w, dw);
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); o];
                    for row in dy.chunks(o) {
                        db.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
                    }
                    self.accumulate(slots, *b, db);
                }
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); n * f];
                    gemm(
                        n,
                        o,
                        f,
                        T::one(),
                        MatRef::new(dy, 0, o, 1),
                        MatRef::new(val(*w), 0, f, 1),
                        T::zero(),
                        &mut dx,
                        0,
                        f,
                        1,
                    );
                    self.accumulate(slots, *x, dx);
                }
            }
            Op::Sum(x) => {
                let dx = vec![dy[0]; self.value(*x).len()];
                self.accumulate(slots, *x, dx);
            }
            Op::Scale(x, s) => {
                let dx = dy.iter().map(|&g| g * *s).collect();
                self.accumulate(slots, *x, dx);
            }
            Op::WeightedSum(terms) => {
                for &(v, wt) in terms {
                    self.accumulate(slots, v, dy.iter().map(|&g| g * wt).collect());
                }
            }
            Op::Tversky { probs, grad } | Op::Mse { pred: probs, grad } => {
                let dx = grad.iter().map(|&g| g * dy[0]).collect();
                self.accumulate(slots, *probs, dx);
            }
        }
        Ok(())
    }
}
