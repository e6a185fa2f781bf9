use std::collections::HashMap;

use super::{conv, numel_of, resize, Scalar, Tensor};
use crate::error::{arg_err, shape_err, Result};

/// Graph operation recorded on a node, with whatever the backward pass needs.
pub(crate) enum Op<T: Scalar> {
    Leaf,
    Add(Tensor<T>, Tensor<T>),
    Sub(Tensor<T>, Tensor<T>),
    Mul(Tensor<T>, Tensor<T>),
    Scale(Tensor<T>, T),
    Relu(Tensor<T>),
    LeakyRelu(Tensor<T>, T),
    Reshape(Tensor<T>),
    Sum(Tensor<T>),
    Mean(Tensor<T>),
    Concat(Vec<Tensor<T>>),
    Conv2d { input: Tensor<T>, kernel: Tensor<T>, stride: usize, padding: usize, cols: Option<Vec<T>> },
    AddBias(Tensor<T>, Tensor<T>),
    Resize(Tensor<T>),
    Correlation { a: Tensor<T>, b: Tensor<T>, radius: usize },
    EpeMap { pred: Tensor<T>, target: Tensor<T>, p: u8 },
    WeightedSum { x: Tensor<T>, weights: Vec<T> },
}

impl<T: Scalar> Op<T> {
    pub(crate) fn parents(&self) -> Vec<&Tensor<T>> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) => vec![a, b],
            Op::Scale(x, _)
            | Op::Relu(x)
            | Op::LeakyRelu(x, _)
            | Op::Reshape(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Resize(x)
            | Op::WeightedSum { x, .. } => vec![x],
            Op::Concat(parts) => parts.iter().collect(),
            Op::Conv2d { input, kernel, .. } => vec![input, kernel],
            Op::Correlation { a, b, .. } => vec![a, b],
            Op::EpeMap { pred, target, .. } => vec![pred, target],
        }
    }
}

/// Per-node gradient buffers used while walking the graph backwards.
pub(crate) struct GradStore<T: Scalar> {
    pub(crate) bufs: HashMap<u64, Vec<T>>,
}

impl<T: Scalar> GradStore<T> {
    /// Accumulation buffer for `t`, or `None` when `t` is not differentiable.
    pub(crate) fn slot(&mut self, t: &Tensor<T>) -> Option<&mut Vec<T>> {
        if !t.requires_grad() {
            return None;
        }
        let n = t.numel();
        Some(self.bufs.entry(t.id()).or_insert_with(|| vec![T::zero(); n]))
    }
}

/// Pointwise operations exposed through [`Tensor::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Relu,
    LeakyRelu(f64),
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(format!("{what}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub fn elementwise(&self, op: Elementwise, other: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        match (op, other) {
            (Elementwise::Add, Some(b)) => self.add(b),
            (Elementwise::Sub, Some(b)) => self.sub(b),
            (Elementwise::Mul, Some(b)) => self.mul(b),
            (Elementwise::Relu, None) => Ok(self.relu()),
            (Elementwise::LeakyRelu(s), None) => Ok(self.leaky_relu(T::lit(s))),
            (op, _) => arg_err(format!("wrong operand count for {op:?}")),
        }
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape(self, other, "add")?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a + b).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Add(self.clone(), other.clone())))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape(self, other, "sub")?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a - b).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Sub(self.clone(), other.clone())))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape(self, other, "mul")?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a * b).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Mul(self.clone(), other.clone())))
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&a| a * c).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Scale(self.clone(), c))
    }

    pub fn relu(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&a| if a > T::zero() { a } else { T::zero() }).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Relu(self.clone()))
    }

    pub fn leaky_relu(&self, slope: T) -> Tensor<T> {
        let data = self.data().iter().map(|&a| if a > T::zero() { a } else { a * slope }).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::LeakyRelu(self.clone(), slope))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel_of(shape) != self.numel() || shape.contains(&0) {
            return shape_err(format!("cannot reshape {:?} to {shape:?}", self.shape()));
        }
        Ok(Tensor::from_op(shape.to_vec(), self.data().to_vec(), Op::Reshape(self.clone())))
    }

    pub fn sum(&self) -> Tensor<T> {
        let s: T = self.data().iter().copied().sum();
        Tensor::from_op(vec![1], vec![s], Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Tensor<T> {
        let s: T = self.data().iter().copied().sum();
        let m = s / T::lit(self.numel() as f64);
        Tensor::from_op(vec![1], vec![m], Op::Mean(self.clone()))
    }

    /// `Σ w_i x_i` with constant weights; returns a scalar.
    pub fn weighted_sum(&self, weights: &[T]) -> Result<Tensor<T>> {
        if weights.len() != self.numel() {
            return shape_err(format!("{} weights for {} values", weights.len(), self.numel()));
        }
        let s: T = self.data().iter().zip(weights).map(|(&x, &w)| x * w).sum();
        Ok(Tensor::from_op(vec![1], vec![s], Op::WeightedSum { x: self.clone(), weights: weights.to_vec() }))
    }

    /// Concatenates along the leading (channel) dimension.
    pub fn concat(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts.first().ok_or_else(|| crate::Error::InvalidArgument("concat of nothing".into()))?;
        let tail = &first.shape()[1..];
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            if &p.shape()[1..] != tail {
                return shape_err(format!("concat: {:?} vs {:?}", first.shape(), p.shape()));
            }
            lead += p.shape()[0];
            data.extend_from_slice(p.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(tail);
        Ok(Tensor::from_op(shape, data, Op::Concat(parts.to_vec())))
    }

    /// Adds a per-channel bias `[C]` to a `[C, ...]` tensor.
    pub fn add_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.shape()[0];
        if bias.shape() != [c] {
            return shape_err(format!("bias {:?} for input {:?}", bias.shape(), self.shape()));
        }
        let plane = self.numel() / c;
        let mut data = self.data().to_vec();
        for (ch, chunk) in data.chunks_mut(plane).enumerate() {
            let b = bias.data()[ch];
            chunk.iter_mut().for_each(|v| *v = *v + b);
        }
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::AddBias(self.clone(), bias.clone())))
    }

    /// Cost volume between two `[C,h,w]` feature maps.
    ///
    /// Output channel `(dy + r)(2r + 1) + (dx + r)` holds
    /// `<a(:, y, x), b(:, y + dy, x + dx)> / sqrt(C)`, zero where the
    /// displaced position leaves the map.
    pub fn correlation(&self, other: &Tensor<T>, radius: usize) -> Result<Tensor<T>> {
        same_shape(self, other, "correlation")?;
        if self.shape().len() != 3 {
            return shape_err(format!("correlation expects [C,h,w], got {:?}", self.shape()));
        }
        if radius == 0 {
            return arg_err("correlation radius must be >= 1");
        }
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let side = 2 * radius + 1;
        let norm = T::one() / T::lit(c as f64).sqrt();
        let a = channels_last(self.data(), c, h * w);
        let b = channels_last(other.data(), c, h * w);
        let mut out = vec![T::zero(); side * side * h * w];
        let r = radius as isize;
        for dy in -r..=r {
            for dx in -r..=r {
                let d = ((dy + r) as usize) * side + (dx + r) as usize;
                for y in 0..h {
                    let yy = y as isize + dy;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let xx = x as isize + dx;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        let pa = &a[(y * w + x) * c..][..c];
                        let pb = &b[(yy as usize * w + xx as usize) * c..][..c];
                        let dot: T = pa.iter().zip(pb).map(|(&u, &v)| u * v).sum();
                        out[(d * h + y) * w + x] = dot * norm;
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            vec![side * side, h, w],
            out,
            Op::Correlation { a: self.clone(), b: other.clone(), radius },
        ))
    }

    /// Per-pixel p-norm of the difference between two `[2,H,W]` flow tensors.
    /// Gradients flow into `self` only; `target` is treated as data.
    pub fn epe_map(&self, target: &Tensor<T>, p: u8) -> Result<Tensor<T>> {
        same_shape(self, target, "epe_map")?;
        if self.shape().len() != 3 || self.shape()[0] != 2 {
            return shape_err(format!("flow tensors must be [2,H,W], got {:?}", self.shape()));
        }
        if p != 1 && p != 2 {
            return arg_err(format!("norm order must be 1 or 2, got {p}"));
        }
        let (h, w) = (self.shape()[1], self.shape()[2]);
        let n = h * w;
        let (pu, pv) = self.data().split_at(n);
        let (tu, tv) = target.data().split_at(n);
        let data = (0..n)
            .map(|i| {
                let du = pu[i] - tu[i];
                let dv = pv[i] - tv[i];
                if p == 1 {
                    du.abs() + dv.abs()
                } else {
                    (du * du + dv * dv).sqrt()
                }
            })
            .collect();
        Ok(Tensor::from_op(
            vec![h, w],
            data,
            Op::EpeMap { pred: self.clone(), target: target.detach(), p },
        ))
    }
}

pub(crate) fn channels_last<T: Scalar>(data: &[T], c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c * hw];
    for ch in 0..c {
        for i in 0..hw {
            out[i * c + ch] = data[ch * hw + i];
        }
    }
    out
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Propagates the output gradient `g` of `node` into its parents' buffers.
pub(crate) fn backward_node<T: Scalar>(op: &Op<T>, out_shape: &[usize], g: &[T], store: &mut GradStore<T>) {
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if let Some(s) = store.slot(a) {
                s.iter_mut().zip(g).for_each(|(s, &g)| *s = *s + g);
            }
            if let Some(s) = store.slot(b) {
                s.iter_mut().zip(g).for_each(|(s, &g)| *s = *s + g);
            }
        }
        Op::Sub(a, b) => {
            if let Some(s) = store.slot(a) {
                s.iter_mut().zip(g).for_each(|(s, &g)| *s = *s + g);
            }
            if let Some(s) = store.slot(b) {
                s.iter_mut().zip(g).for_each(|(s, &g)| *s = *s - g);
            }
        }
        Op::Mul(a, b) => {
            if let Some(s) = store.slot(a) {
                for ((s, &g), &bv) in s.iter_mut().zip(g).zip(b.data()) {
                    *s = *s + g * bv;
                }
            }
            if let Some(s) = store.slot(b) {
                for ((s, &g), &av) in s.iter_mut().zip(g).zip(a.data()) {
                    *s = *s + g * av;
                }
            }
        }
        Op::Scale(x, c) => {
            if let Some(s) = store.slot(x) {
                s.iter_mut().zip(g).for_each(|(s, &g)| *s = *s + g * *c);
            }
        }
        Op::Relu(x) => {
            if let Some(s) = store.slot(x) {
                for ((s, &g), &v) in s.iter_mut().zip(g).zip(x.data()) {
                    if v > T::zero() {
                        *s = *s + g;
                    }
                }
            }
        }
        Op::LeakyRelu(x, slope) => {
            if let Some(s) = store.slot(x) {
                for ((s, &g), &v) in s.iter_mut().zip(g).zip(x.data()) {
                    *s = *s + if v > T::zero() { g } else { g * *slope };
                }
            }
        }
        Op::Reshape(x) => {
            if let Some(s) = store.slot(x) {
                s.iter_mut().zip(g).for_each(|(s, &g)| *s = *s + g);
            }
        }
        Op::Sum(x) => {
            if let Some(s) = store.slot(x) {
                s.iter_mut().for_each(|s| *s = *s + g[0]);
            }
        }
        Op::Mean(x) => {
            let gm = g[0] / T::lit(x.numel() as f64);
            if let Some(s) = store.slot(x) {
                s.iter_mut().for_each(|s| *s = *s + gm);
            }
        }
        Op::WeightedSum { x, weights } => {
            if let Some(s) = store.slot(x) {
                for (s, &w) in s.iter_mut().zip(weights) {
                    *s = *s + g[0] * w;
                }
            }
        }
        Op::Concat(parts) => {
            let mut off = 0;
            for p in parts {
                let n = p.numel();
                if let Some(s) = store.slot(p) {
                    s.iter_mut().zip(&g[off..off + n]).for_each(|(s, &g)| *s = *s + g);
                }
                off += n;
            }
        }
        Op::AddBias(x, bias) => {
            if let Some(s) = store.slot(x) {
                s.iter_mut().zip(g).for_each(|(s, &g)| *s = *s + g);
            }
            if let Some(s) = store.slot(bias) {
                let c = bias.numel();
                let plane = g.len() / c;
                for (ch, chunk) in g.chunks(plane).enumerate() {
                    let t: T = chunk.iter().copied().sum();
                    s[ch] = s[ch] + t;
                }
            }
        }
        Op::Conv2d { input, kernel, stride, padding, cols } => {
            conv::conv2d_backward(input, kernel, *stride, *padding, cols.as_deref(), out_shape, g, store);
        }
        Op::Resize(x) => resize::resize_backward(x, out_shape, g, store),
        Op::Correlation { a, b, radius } => correlation_backward(a, b, *radius, g, store),
        Op::EpeMap { pred, target, p } => {
            if let Some(s) = store.slot(pred) {
                let n = g.len();
                let (pu, pv) = pred.data().split_at(n);
                let (tu, tv) = target.data().split_at(n);
                for i in 0..n {
                    let du = pu[i] - tu[i];
                    let dv = pv[i] - tv[i];
                    let (gu, gv) = if *p == 1 {
                        (sign(du), sign(dv))
                    } else {
                        let norm = (du * du + dv * dv).sqrt();
                        if norm > T::zero() {
                            (du / norm, dv / norm)
                        } else {
                            (T::zero(), T::zero())
                        }
                    };
                    s[i] = s[i] + g[i] * gu;
                    s[n + i] = s[n + i] + g[i] * gv;
                }
            }
        }
    }
}

fn correlation_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, radius: usize, g: &[T], store: &mut GradStore<T>) {
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let side = 2 * radius + 1;
    let r = radius as isize;
    let norm = T::one() / T::lit(c as f64).sqrt();
    let hw = h * w;
    let av = channels_last(a.data(), c, hw);
    let bv = channels_last(b.data(), c, hw);
    let mut ga = vec![T::zero(); c * hw];
    let mut gb = vec![T::zero(); c * hw];
    for dy in -r..=r {
        for dx in -r..=r {
            let d = ((dy + r) as usize) * side + (dx + r) as usize;
            for y in 0..h {
                let yy = y as isize + dy;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let xx = x as isize + dx;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let go = g[(d * h + y) * w + x] * norm;
                    if go == T::zero() {
                        continue;
                    }
                    let ia = (y * w + x) * c;
                    let ib = (yy as usize * w + xx as usize) * c;
                    for k in 0..c {
                        ga[ia + k] = ga[ia + k] + go * bv[ib + k];
                        gb[ib + k] = gb[ib + k] + go * av[ia + k];
                    }
                }
            }
        }
    }
    for (t, gl) in [(a, ga), (b, gb)] {
        if let Some(s) = store.slot(t) {
            for ch in 0..c {
                for i in 0..hw {
                    s[ch * hw + i] = s[ch * hw + i] + gl[i * c + ch];
                }
            }
        }
    }
}
