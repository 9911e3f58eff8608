//! Reverse-mode tape over [`Tensor`] operations.
//!
//! A [`Graph`] records every operation applied during one forward pass. Parameters
//! enter through [`Graph::param`] under a caller-chosen integer id, and
//! [`Graph::backward`] returns one gradient per parameter id that the outputs
//! depend on. The graph never mutates its inputs; batch-norm statistics observed
//! in training mode are handed back to the caller.

use std::collections::HashMap;

use crate::conv::{self, Conv2dGeom, ConvPlan};
use crate::sampling::{self, ResizePlan};
use crate::{Result, Shape, Tensor, TensorError};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Per-channel statistics of one batch-norm call in training mode.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    /// Unbiased (Bessel-corrected) variance, as used for running estimates.
    pub var: Vec<f32>,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    Conv {
        x: Var,
        w: Var,
        bias: Option<Var>,
        plan: ConvPlan,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f32>,
        batch: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Resize {
        x: Var,
        plan: ResizePlan,
    },
    Add(Var, Var),
    Concat(Vec<Var>),
    ScaleChannels {
        x: Var,
        scale: Var,
    },
    GlobalAvgPool(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Gradients keyed by the parameter ids passed to [`Graph::param`].
#[derive(Debug, Default)]
pub struct ParamGrads {
    grads: HashMap<usize, Tensor>,
}

impl ParamGrads {
    pub fn get(&self, id: usize) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.grads.iter().map(|(&k, v)| (k, v))
    }
}

#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
    training: bool,
}

impl Graph {
    pub fn new(training: bool) -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            training,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Trainable leaf. Repeated calls with the same id return the same handle.
    pub fn param(&mut self, id: usize, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(value.clone(), Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, geom: Conv2dGeom) -> Result<Var> {
        let plan = ConvPlan::new(self.shape(x), self.shape(w), geom)?;
        if let Some(b) = bias {
            let expected = Shape::channels(plan.output.c);
            if self.shape(b) != expected {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d bias",
                    expected,
                    got: self.shape(b),
                });
            }
        }
        let out = conv::forward(&plan, self.value(x), self.value(w), bias.map(|b| self.value(b)));
        let tracked = self.tracked(x) || self.tracked(w) || bias.is_some_and(|b| self.tracked(b));
        Ok(self.push(out, Op::Conv { x, w, bias, plan }, tracked))
    }

    fn check_channel_vec(&self, op: &'static str, v: Var, c: usize) -> Result<()> {
        let expected = Shape::channels(c);
        if self.shape(v) != expected {
            return Err(TensorError::ShapeMismatch {
                op,
                expected,
                got: self.shape(v),
            });
        }
        Ok(())
    }

    /// Batch normalization with statistics of the current batch.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<(Var, BatchStats)> {
        let s = self.shape(x);
        self.check_channel_vec("batch_norm gamma", gamma, s.c)?;
        self.check_channel_vec("batch_norm beta", beta, s.c)?;
        let count = s.n * s.plane();
        if count == 0 {
            return Err(TensorError::InvalidArgument("batch norm over an empty batch".into()));
        }
        let xv = self.value(x);
        let mut mean = vec![0f64; s.c];
        let mut sq = vec![0f64; s.c];
        for n in 0..s.n {
            for c in 0..s.c {
                let (mut acc, mut acc2) = (0f64, 0f64);
                for &v in xv.plane(n, c) {
                    acc += v as f64;
                    acc2 += v as f64 * v as f64;
                }
                mean[c] += acc;
                sq[c] += acc2;
            }
        }
        let mut inv_std = vec![0f32; s.c];
        let mut stats = BatchStats {
            mean: vec![0.0; s.c],
            var: vec![0.0; s.c],
        };
        let mut mean32 = vec![0f32; s.c];
        for c in 0..s.c {
            let m = mean[c] / count as f64;
            let var = (sq[c] / count as f64 - m * m).max(0.0);
            mean32[c] = m as f32;
            inv_std[c] = (1.0 / (var + eps as f64).sqrt()) as f32;
            stats.mean[c] = m as f32;
            stats.var[c] = if count > 1 {
                (var * count as f64 / (count - 1) as f64) as f32
            } else {
                var as f32
            };
        }
        let out = self.normalize(x, gamma, beta, &mean32, inv_std, true);
        Ok((out, stats))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f32],
        var: &[f32],
        eps: f32,
    ) -> Result<Var> {
        let s = self.shape(x);
        self.check_channel_vec("batch_norm gamma", gamma, s.c)?;
        self.check_channel_vec("batch_norm beta", beta, s.c)?;
        if mean.len() != s.c || var.len() != s.c {
            return Err(TensorError::InvalidArgument(format!(
                "running statistics of length {}/{} for {} channels",
                mean.len(),
                var.len(),
                s.c
            )));
        }
        let inv_std = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        Ok(self.normalize(x, gamma, beta, mean, inv_std, false))
    }

    fn normalize(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f32],
        inv_std: Vec<f32>,
        batch: bool,
    ) -> Var {
        let s = self.shape(x);
        let xv = self.value(x);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Tensor::zeros(s);
        let mut out = Tensor::zeros(s);
        let p = s.plane();
        for n in 0..s.n {
            for c in 0..s.c {
                let off = (n * s.c + c) * p;
                let src = xv.plane(n, c);
                let (m, is, gc, bc) = (mean[c], inv_std[c], g[c], b[c]);
                for (i, &v) in src.iter().enumerate() {
                    let h = (v - m) * is;
                    xhat.data_mut()[off + i] = h;
                    out.data_mut()[off + i] = gc * h + bc;
                }
            }
        }
        let tracked = self.tracked(x) || self.tracked(gamma) || self.tracked(beta);
        self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch,
            },
            tracked,
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let tracked = self.tracked(x);
        self.push(out, Op::Relu(x), tracked)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        let tracked = self.tracked(x);
        self.push(out, Op::Sigmoid(x), tracked)
    }

    pub fn max_pool(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let (out, argmax) = sampling::max_pool_forward(self.value(x), kernel, stride, padding)?;
        let tracked = self.tracked(x);
        Ok(self.push(out, Op::MaxPool { x, argmax }, tracked))
    }

    /// Bilinear resampling to `height × width` (half-pixel centres, no corner alignment).
    pub fn resize(&mut self, x: Var, height: usize, width: usize) -> Result<Var> {
        let plan = ResizePlan::new(self.shape(x), height, width)?;
        if plan.input == plan.output {
            return Ok(x);
        }
        let out = plan.forward(self.value(x));
        let tracked = self.tracked(x);
        Ok(self.push(out, Op::Resize { x, plan }, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                expected: sa,
                got: sb,
            });
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b))?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::Add(a, b), tracked))
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("concat of zero tensors".into()))?;
        let s0 = self.shape(first);
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    expected: Shape::new(s0.n, s.c, s0.h, s0.w),
                    got: s,
                });
            }
            channels += s.c;
        }
        let out_shape = Shape::new(s0.n, channels, s0.h, s0.w);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..s0.n {
            for &p in parts {
                let t = self.value(p);
                let len = t.shape().c * s0.plane();
                data.extend_from_slice(&t.data()[n * len..(n + 1) * len]);
            }
        }
        let out = Tensor::from_vec(out_shape, data)?;
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), tracked))
    }

    /// Multiplies every `H × W` plane of `x` by the matching entry of an `N × C × 1 × 1` tensor.
    pub fn scale_channels(&mut self, x: Var, scale: Var) -> Result<Var> {
        let (sx, ss) = (self.shape(x), self.shape(scale));
        let expected = Shape::new(sx.n, sx.c, 1, 1);
        if ss != expected {
            return Err(TensorError::ShapeMismatch {
                op: "scale_channels",
                expected,
                got: ss,
            });
        }
        let sv = self.value(scale).data().to_vec();
        let mut out = self.value(x).clone();
        for (plane, &k) in out.data_mut().chunks_mut(sx.plane()).zip(&sv) {
            plane.iter_mut().for_each(|v| *v *= k);
        }
        let tracked = self.tracked(x) || self.tracked(scale);
        Ok(self.push(out, Op::ScaleChannels { x, scale }, tracked))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let out = Tensor::from_fn(Shape::new(s.n, s.c, 1, 1), |i| {
            let plane = &self.value(x).data()[i * s.plane()..(i + 1) * s.plane()];
            (plane.iter().map(|&v| v as f64).sum::<f64>() / s.plane() as f64) as f32
        });
        let tracked = self.tracked(x);
        self.push(out, Op::GlobalAvgPool(x), tracked)
    }

    /// Back-propagates `seeds` (upstream gradients of chosen outputs) to every parameter.
    pub fn backward(&self, seeds: &[(Var, Tensor)]) -> Result<ParamGrads> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            if g.shape() != self.shape(*v) {
                return Err(TensorError::ShapeMismatch {
                    op: "backward seed",
                    expected: self.shape(*v),
                    got: g.shape(),
                });
            }
            accumulate(&mut grads, *v, g.clone());
        }
        let mut out = ParamGrads::default();
        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    out.grads.insert(*id, gy);
                }
                Op::Conv { x, w, bias, plan } => {
                    let (dx, dw, db) = conv::backward(
                        plan,
                        self.value(*x),
                        self.value(*w),
                        &gy,
                        self.tracked(*x),
                        bias.is_some_and(|b| self.tracked(b)),
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *x, dx);
                    }
                    if self.tracked(*w) {
                        accumulate(&mut grads, *w, dw);
                    }
                    if let (Some(b), Some(db)) = (bias, db) {
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch,
                } => {
                    let s = xhat.shape();
                    let g = self.value(*gamma).data();
                    let mut dgamma = Tensor::zeros(Shape::channels(s.c));
                    let mut dbeta = Tensor::zeros(Shape::channels(s.c));
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let (mut sg, mut sgx) = (0f64, 0f64);
                            for (&d, &h) in gy.plane(n, c).iter().zip(xhat.plane(n, c)) {
                                sg += d as f64;
                                sgx += d as f64 * h as f64;
                            }
                            dbeta.data_mut()[c] += sg as f32;
                            dgamma.data_mut()[c] += sgx as f32;
                        }
                    }
                    if self.tracked(*x) {
                        let mut dx = Tensor::zeros(s);
                        let count = (s.n * s.plane()) as f32;
                        let p = s.plane();
                        for n in 0..s.n {
                            for c in 0..s.c {
                                let off = (n * s.c + c) * p;
                                let k = g[c] * inv_std[c];
                                let d = gy.plane(n, c);
                                let h = xhat.plane(n, c);
                                let dst = &mut dx.data_mut()[off..off + p];
                                if *batch {
                                    let (mb, mh) = (dbeta.data()[c] / count, dgamma.data()[c] / count);
                                    for i in 0..p {
                                        dst[i] = k * (d[i] - mb - h[i] * mh);
                                    }
                                } else {
                                    for i in 0..p {
                                        dst[i] = k * d[i];
                                    }
                                }
                            }
                        }
                        accumulate(&mut grads, *x, dx);
                    }
                    if self.tracked(*gamma) {
                        accumulate(&mut grads, *gamma, dgamma);
                    }
                    if self.tracked(*beta) {
                        accumulate(&mut grads, *beta, dbeta);
                    }
                }
                Op::Relu(x) => {
                    let y = &node.value;
                    let mut dx = gy;
                    for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let mut dx = gy;
                    for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
                        *d *= v * (1.0 - v);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::MaxPool { x, argmax } => {
                    let dx = sampling::max_pool_backward(self.shape(*x), &gy, argmax);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Resize { x, plan } => {
                    accumulate(&mut grads, *x, plan.backward(&gy));
                }
                Op::Add(a, b) => {
                    if self.tracked(*b) {
                        accumulate(&mut grads, *b, gy.clone());
                    }
                    if self.tracked(*a) {
                        accumulate(&mut grads, *a, gy);
                    }
                }
                Op::Concat(parts) => {
                    let s = gy.shape();
                    let p = s.plane();
                    let mut offset = 0;
                    for &part in parts {
                        let ps = self.shape(part);
                        if self.tracked(part) {
                            let mut data = Vec::with_capacity(ps.numel());
                            for n in 0..s.n {
                                let start = (n * s.c + offset) * p;
                                data.extend_from_slice(&gy.data()[start..start + ps.c * p]);
                            }
                            accumulate(&mut grads, part, Tensor::from_vec(ps, data)?);
                        }
                        offset += ps.c;
                    }
                }
                Op::ScaleChannels { x, scale } => {
                    let xs = self.shape(*x);
                    let xv = self.value(*x);
                    let sv = self.value(*scale);
                    if self.tracked(*scale) {
                        let ds = Tensor::from_fn(sv.shape(), |i| {
                            let d = &gy.data()[i * xs.plane()..(i + 1) * xs.plane()];
                            let v = &xv.data()[i * xs.plane()..(i + 1) * xs.plane()];
                            d.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() as f32
                        });
                        accumulate(&mut grads, *scale, ds);
                    }
                    if self.tracked(*x) {
                        let mut dx = gy;
                        for (plane, &k) in dx.data_mut().chunks_mut(xs.plane()).zip(sv.data()) {
                            plane.iter_mut().for_each(|v| *v *= k);
                        }
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::GlobalAvgPool(x) => {
                    let xs = self.shape(*x);
                    let inv = 1.0 / xs.plane() as f32;
                    let dx = Tensor::from_fn(xs, |i| gy.data()[i / xs.plane()] * inv);
                    accumulate(&mut grads, *x, dx);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
