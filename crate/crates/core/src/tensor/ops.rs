//! Differentiable primitives.
//!
//! Every primitive has a forward pass producing a [`GradPair`] and a backward
//! pass that, given the same inputs and an upstream gradient shaped like the
//! forward value, returns one gradient per input. Parameters (weights, biases)
//! are ordinary inputs, so the same backward serves input and parameter
//! gradients.

use std::borrow::Cow;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gemm::{gemm, Mat};
use crate::tensor::Tensor;
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    /// Output extent `ceil(in / stride)`, border split with the extra row/column at the end.
    Same,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Avg,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// A primitive operation. Input order is fixed per op:
///
/// | op | inputs |
/// |----|--------|
/// | `Dense` | `x[b,in]`, `w[in,out]`, `bias[out]` |
/// | `Conv2d` | `x[b,c,h,w]`, `k[f,c,kh,kw]`, `bias[f]` |
/// | `Concat`, `Add` | one or more tensors |
/// | everything else | a single tensor |
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Primitive {
    Dense,
    Conv2d {
        padding: Padding,
        stride: usize,
    },
    MaxPool2d {
        window: usize,
        stride: usize,
        padding: Padding,
    },
    GlobalPool {
        mode: PoolMode,
    },
    Activation {
        kind: Activation,
    },
    /// Concatenation along axis 1 (channels for feature maps, features for vectors).
    Concat,
    Add,
    Dropout {
        rate: f64,
    },
    Flatten,
}

/// Forward value plus whatever the backward pass needs beyond the inputs.
#[derive(Clone, Debug)]
pub struct GradPair {
    pub value: Tensor,
    cached: Cached,
}

#[derive(Clone, Debug)]
enum Cached {
    Dense,
    Conv(ConvGeom),
    /// Flat input index feeding each output element.
    Argmax(Vec<usize>),
    GlobalAvg,
    Relu,
    Sigmoid,
    Concat(Vec<usize>),
    Add(usize),
    /// `None` when the op ran as the identity (inference or rate 0).
    Dropout(Option<Vec<f64>>),
    Flatten,
}

/// Output extent and leading pad for one spatial axis.
pub(crate) fn conv_output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    if stride == 0 || kernel == 0 {
        return Err(Error::param("kernel and stride must be positive"));
    }
    match padding {
        Padding::Valid => {
            if kernel > input {
                return Err(Error::dim(format!(
                    "kernel extent {kernel} exceeds input extent {input} under valid padding"
                )));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            if input == 0 {
                return Err(Error::dim("empty spatial extent"));
            }
            let (out, total) = same_padding(input, kernel, stride);
            if kernel > input + total {
                return Err(Error::dim(format!(
                    "kernel extent {kernel} exceeds padded input extent {}",
                    input + total
                )));
            }
            Ok((out, total / 2))
        }
    }
}

/// `(output extent, total padding)` for same padding.
pub(crate) fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, total)
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    filters: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(x: &[usize], k: &[usize], bias: &[usize], stride: usize, padding: Padding) -> Result<Self> {
        let (&[b, c, h, w], &[f, kc, kh, kw]) = (x, k) else {
            return Err(Error::dim(format!(
                "conv2d expects input [b,c,h,w] and kernels [f,c,kh,kw], got {x:?} and {k:?}"
            )));
        };
        if c != kc {
            return Err(Error::dim(format!(
                "conv2d channel mismatch: input {x:?} vs kernels {k:?}"
            )));
        }
        if bias != [f] {
            return Err(Error::dim(format!("conv2d bias {bias:?} vs kernels {k:?}")));
        }
        let (oh, pad_top) = conv_output_extent(h, kh, stride, padding)?;
        let (ow, pad_left) = conv_output_extent(w, kw, stride, padding)?;
        Ok(ConvGeom {
            batch: b,
            channels: c,
            height: h,
            width: w,
            filters: f,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
            oh,
            ow,
        })
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    /// Patch matrix `[c*kh*kw, oh*ow]` for one image.
    fn im2col<'a>(&self, image: &'a [f64]) -> Cow<'a, [f64]> {
        if self.is_pointwise() {
            return Cow::Borrowed(image);
        }
        let p = self.out_len();
        let mut cols = vec![0.0; self.patch_len() * p];
        for ci in 0..self.channels {
            let plane = &image[ci * self.height * self.width..][..self.height * self.width];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * p..][..p];
                    let (lo, hi) = self.valid_range(kj, self.pad_left, self.width, self.ow);
                    for oy in 0..self.oh {
                        let Some(y) = self.source_index(oy, ki, self.pad_top, self.height) else {
                            continue;
                        };
                        let src = &plane[y * self.width..][..self.width];
                        let dst = &mut dst[oy * self.ow..][..self.ow];
                        if self.stride == 1 {
                            let x0 = lo + kj - self.pad_left;
                            dst[lo..hi].copy_from_slice(&src[x0..x0 + hi - lo]);
                        } else {
                            for ox in lo..hi {
                                dst[ox] = src[ox * self.stride + kj - self.pad_left];
                            }
                        }
                    }
                }
            }
        }
        Cow::Owned(cols)
    }

    /// Scatter-add a patch-matrix gradient back onto one image gradient.
    fn col2im(&self, cols: &[f64], image_grad: &mut [f64]) {
        let p = self.out_len();
        for ci in 0..self.channels {
            let plane = &mut image_grad[ci * self.height * self.width..][..self.height * self.width];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * p..][..p];
                    let (lo, hi) = self.valid_range(kj, self.pad_left, self.width, self.ow);
                    for oy in 0..self.oh {
                        let Some(y) = self.source_index(oy, ki, self.pad_top, self.height) else {
                            continue;
                        };
                        let dst = &mut plane[y * self.width..][..self.width];
                        let src = &src[oy * self.ow..][..self.ow];
                        if self.stride == 1 {
                            let x0 = lo + kj - self.pad_left;
                            dst[x0..x0 + hi - lo].iter_mut().zip(&src[lo..hi]).for_each(|(d, s)| *d += s);
                        } else {
                            for ox in lo..hi {
                                dst[ox * self.stride + kj - self.pad_left] += src[ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Input row/column read by output position `o` at kernel offset `k`, if in bounds.
    fn source_index(&self, o: usize, k: usize, pad: usize, extent: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(pad).filter(|&i| i < extent)
    }

    /// Output positions `lo..hi` whose source column at kernel offset `k` is in bounds.
    fn valid_range(&self, k: usize, pad: usize, extent: usize, out: usize) -> (usize, usize) {
        let lo = pad.saturating_sub(k).div_ceil(self.stride);
        let hi = if extent + pad > k {
            ((extent + pad - k - 1) / self.stride + 1).min(out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

impl Primitive {
    /// Required input count, `None` for variadic ops.
    pub fn arity(&self) -> Option<usize> {
        match self {
            Primitive::Dense | Primitive::Conv2d { .. } => Some(3),
            Primitive::Concat | Primitive::Add => None,
            _ => Some(1),
        }
    }

    fn check_arity(&self, given: usize) -> Result<()> {
        match self.arity() {
            Some(n) if n != given => Err(Error::param(format!(
                "{self:?} takes {n} inputs, got {given}"
            ))),
            None if given == 0 => Err(Error::param(format!("{self:?} needs at least one input"))),
            _ => Ok(()),
        }
    }

    /// Shape of the forward value for the given input shapes (batch axis included).
    pub fn output_shape(&self, shapes: &[&[usize]]) -> Result<Vec<usize>> {
        self.check_arity(shapes.len())?;
        match self {
            Primitive::Dense => {
                let (x, w, bias) = (shapes[0], shapes[1], shapes[2]);
                match (x, w) {
                    (&[b, i], &[wi, o]) if i == wi && bias == [o] => Ok(vec![b, o]),
                    _ => Err(Error::dim(format!(
                        "dense: input {x:?}, weights {w:?}, bias {bias:?} are incompatible"
                    ))),
                }
            }
            Primitive::Conv2d { padding, stride } => {
                let g = ConvGeom::new(shapes[0], shapes[1], shapes[2], *stride, *padding)?;
                Ok(vec![g.batch, g.filters, g.oh, g.ow])
            }
            Primitive::MaxPool2d {
                window,
                stride,
                padding,
            } => {
                let &[b, c, h, w] = shapes[0] else {
                    return Err(Error::dim(format!("maxpool2d expects [b,c,h,w], got {:?}", shapes[0])));
                };
                let (oh, _) = conv_output_extent(h, *window, *stride, *padding)?;
                let (ow, _) = conv_output_extent(w, *window, *stride, *padding)?;
                Ok(vec![b, c, oh, ow])
            }
            Primitive::GlobalPool { .. } => match shapes[0] {
                &[b, c, h, w] if h * w >= 1 => Ok(vec![b, c]),
                s => Err(Error::dim(format!("global pool expects non-empty [b,c,h,w], got {s:?}"))),
            },
            Primitive::Activation { .. } => Ok(shapes[0].to_vec()),
            Primitive::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(Error::param(format!("dropout rate {rate} outside [0, 1)")));
                }
                Ok(shapes[0].to_vec())
            }
            Primitive::Flatten => match shapes[0] {
                [b, rest @ ..] => Ok(vec![*b, rest.iter().product()]),
                [] => Err(Error::dim("cannot flatten a scalar")),
            },
            Primitive::Concat => {
                let first = shapes[0];
                if first.len() < 2 {
                    return Err(Error::dim(format!("concat needs rank >= 2, got {first:?}")));
                }
                let mut width = 0;
                for s in shapes {
                    if s.len() != first.len() || s[0] != first[0] || s[2..] != first[2..] {
                        return Err(Error::dim(format!(
                            "concat: {s:?} does not match {first:?} outside the feature axis"
                        )));
                    }
                    width += s[1];
                }
                let mut out = first.to_vec();
                out[1] = width;
                Ok(out)
            }
            Primitive::Add => {
                for s in &shapes[1..] {
                    if *s != shapes[0] {
                        return Err(Error::dim(format!("add: {s:?} vs {:?}", shapes[0])));
                    }
                }
                Ok(shapes[0].to_vec())
            }
        }
    }

    /// Evaluate the op. `training` only matters for dropout, which draws its mask from `rng`.
    pub fn forward(&self, inputs: &[&Tensor], training: bool, rng: &mut Rng) -> Result<GradPair> {
        let shapes: Vec<&[usize]> = inputs.iter().map(|t| t.shape()).collect();
        let out_shape = self.output_shape(&shapes)?;
        let (data, cached) = match self {
            Primitive::Dense => (dense_forward(inputs, &out_shape), Cached::Dense),
            Primitive::Conv2d { padding, stride } => {
                let g = ConvGeom::new(shapes[0], shapes[1], shapes[2], *stride, *padding)?;
                (conv_forward(&g, inputs), Cached::Conv(g))
            }
            Primitive::MaxPool2d {
                window,
                stride,
                padding,
            } => {
                let (data, argmax) = maxpool_forward(inputs[0], *window, *stride, *padding, &out_shape);
                (data, Cached::Argmax(argmax))
            }
            Primitive::GlobalPool { mode } => {
                let [b, c, h, w] = inputs[0].dims4()?;
                let hw = h * w;
                let x = inputs[0].data();
                match mode {
                    PoolMode::Avg => {
                        let data = x.chunks_exact(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
                        (data, Cached::GlobalAvg)
                    }
                    PoolMode::Max => {
                        let mut data = Vec::with_capacity(b * c);
                        let mut argmax = Vec::with_capacity(b * c);
                        for (plane_idx, plane) in x.chunks_exact(hw).enumerate() {
                            let (best, value) = first_max(plane.iter().copied().enumerate());
                            data.push(value);
                            argmax.push(plane_idx * hw + best);
                        }
                        (data, Cached::Argmax(argmax))
                    }
                }
            }
            Primitive::Activation { kind } => match kind {
                Activation::Relu => (
                    inputs[0].data().iter().map(|&v| v.max(0.0)).collect(),
                    Cached::Relu,
                ),
                Activation::Sigmoid => (
                    inputs[0].data().iter().map(|&v| sigmoid(v)).collect(),
                    Cached::Sigmoid,
                ),
            },
            Primitive::Dropout { rate } => {
                let x = inputs[0].data();
                if training && *rate > 0.0 {
                    let keep = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = (0..x.len())
                        .map(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep })
                        .collect();
                    let data = x.iter().zip(&mask).map(|(v, m)| v * m).collect();
                    (data, Cached::Dropout(Some(mask)))
                } else {
                    (x.to_vec(), Cached::Dropout(None))
                }
            }
            Primitive::Flatten => (inputs[0].data().to_vec(), Cached::Flatten),
            Primitive::Concat => {
                let widths: Vec<usize> = shapes.iter().map(|s| s[1]).collect();
                (concat_forward(inputs, &out_shape), Cached::Concat(widths))
            }
            Primitive::Add => {
                let mut data = inputs[0].data().to_vec();
                for t in &inputs[1..] {
                    data.iter_mut().zip(t.data()).for_each(|(a, b)| *a += b);
                }
                (data, Cached::Add(inputs.len()))
            }
        };
        Ok(GradPair {
            value: Tensor::new(out_shape, data)?,
            cached,
        })
    }
}

impl GradPair {
    /// Gradients with respect to each forward input, in input order.
    ///
    /// `inputs` must be the tensors the forward pass consumed.
    pub fn backward(&self, inputs: &[&Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
        self.backward_partial(inputs, upstream, true)
    }

    /// As [`GradPair::backward`]; with `first_input == false` dense and conv
    /// skip the data-input gradient and return an empty tensor in its place.
    pub(crate) fn backward_partial(
        &self,
        inputs: &[&Tensor],
        upstream: &Tensor,
        first_input: bool,
    ) -> Result<Vec<Tensor>> {
        if upstream.shape() != self.value.shape() {
            return Err(Error::dim(format!(
                "upstream gradient {:?} does not match forward value {:?}",
                upstream.shape(),
                self.value.shape()
            )));
        }
        let g = upstream.data();
        let like = |i: usize, data: Vec<f64>| Tensor::new(inputs[i].shape(), data);
        match &self.cached {
            Cached::Dense => {
                let [b, n_in] = inputs[0].dims2()?;
                let n_out = self.value.shape()[1];
                let dx = if first_input {
                    let mut dx = vec![0.0; b * n_in];
                    gemm(b, n_out, n_in, Mat::n(g), Mat::t(inputs[1].data()), 0.0, &mut dx);
                    like(0, dx)?
                } else {
                    Tensor::zeros([0])
                };
                let mut dw = vec![0.0; n_in * n_out];
                gemm(n_in, b, n_out, Mat::t(inputs[0].data()), Mat::n(g), 0.0, &mut dw);
                let mut db = vec![0.0; n_out];
                for row in g.chunks_exact(n_out) {
                    db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                Ok(vec![dx, like(1, dw)?, like(2, db)?])
            }
            Cached::Conv(geom) => {
                let (dx, dk, db) = conv_backward(geom, inputs, g, first_input);
                let dx = match dx {
                    Some(dx) => like(0, dx)?,
                    None => Tensor::zeros([0]),
                };
                Ok(vec![dx, like(1, dk)?, like(2, db)?])
            }
            Cached::Argmax(argmax) => {
                let mut dx = vec![0.0; inputs[0].len()];
                for (&src, &v) in argmax.iter().zip(g) {
                    dx[src] += v;
                }
                Ok(vec![like(0, dx)?])
            }
            Cached::GlobalAvg => {
                let [_, _, h, w] = inputs[0].dims4()?;
                let hw = h * w;
                let scale = 1.0 / hw as f64;
                let dx = g.iter().flat_map(|&v| std::iter::repeat_n(v * scale, hw)).collect();
                Ok(vec![like(0, dx)?])
            }
            Cached::Relu => {
                let dx = inputs[0]
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &v)| if x > 0.0 { v } else { 0.0 })
                    .collect();
                Ok(vec![like(0, dx)?])
            }
            Cached::Sigmoid => {
                let dx = self
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &v)| v * s * (1.0 - s))
                    .collect();
                Ok(vec![like(0, dx)?])
            }
            Cached::Dropout(mask) => {
                let dx = match mask {
                    Some(m) => g.iter().zip(m).map(|(v, m)| v * m).collect(),
                    None => g.to_vec(),
                };
                Ok(vec![like(0, dx)?])
            }
            Cached::Flatten => Ok(vec![like(0, g.to_vec())?]),
            Cached::Concat(widths) => {
                let shape = self.value.shape();
                let outer = shape[0];
                let inner: usize = shape[2..].iter().product();
                let total = shape[1];
                let mut grads = Vec::with_capacity(widths.len());
                let mut offset = 0;
                for (i, &wdt) in widths.iter().enumerate() {
                    let mut d = Vec::with_capacity(outer * wdt * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        d.extend_from_slice(&g[start..start + wdt * inner]);
                    }
                    grads.push(like(i, d)?);
                    offset += wdt;
                }
                Ok(grads)
            }
            Cached::Add(n) => (0..*n).map(|i| like(i, g.to_vec())).collect(),
        }
    }
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// First maximal element in iteration order.
fn first_max(values: impl Iterator<Item = (usize, f64)>) -> (usize, f64) {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (i, v) in values {
        if best.0 == usize::MAX || v > best.1 {
            best = (i, v);
        }
    }
    best
}

fn dense_forward(inputs: &[&Tensor], out_shape: &[usize]) -> Vec<f64> {
    let (b, n_out) = (out_shape[0], out_shape[1]);
    let n_in = inputs[0].shape()[1];
    let bias = inputs[2].data();
    let mut out: Vec<f64> = (0..b).flat_map(|_| bias.iter().copied()).collect();
    gemm(b, n_in, n_out, Mat::n(inputs[0].data()), Mat::n(inputs[1].data()), 1.0, &mut out);
    out
}

fn conv_forward(g: &ConvGeom, inputs: &[&Tensor]) -> Vec<f64> {
    let (x, k, bias) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
    let img_len = g.channels * g.height * g.width;
    let p = g.out_len();
    let mut out = vec![0.0; g.batch * g.filters * p];
    for (img, dst) in x.chunks_exact(img_len).zip(out.chunks_exact_mut(g.filters * p)) {
        for (row, &bv) in dst.chunks_exact_mut(p).zip(bias) {
            row.fill(bv);
        }
        let cols = g.im2col(img);
        gemm(g.filters, g.patch_len(), p, Mat::n(k), Mat::n(&cols), 1.0, dst);
    }
    out
}

fn conv_backward(
    g: &ConvGeom,
    inputs: &[&Tensor],
    upstream: &[f64],
    input_grad: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (x, k) = (inputs[0].data(), inputs[1].data());
    let img_len = g.channels * g.height * g.width;
    let p = g.out_len();
    let kl = g.patch_len();
    let mut dx = vec![0.0; if input_grad { x.len() } else { 0 }];
    let mut dk = vec![0.0; k.len()];
    let mut db = vec![0.0; g.filters];
    let mut dcols = vec![0.0; kl * p];
    for (i, (img, gout)) in x
        .chunks_exact(img_len)
        .zip(upstream.chunks_exact(g.filters * p))
        .enumerate()
    {
        for (acc, row) in db.iter_mut().zip(gout.chunks_exact(p)) {
            *acc += row.iter().sum::<f64>();
        }
        let cols = g.im2col(img);
        gemm(g.filters, p, kl, Mat::n(gout), Mat::t(&cols), 1.0, &mut dk);
        if !input_grad {
            continue;
        }
        let dimg = &mut dx[i * img_len..(i + 1) * img_len];
        if g.is_pointwise() {
            gemm(kl, g.filters, p, Mat::t(k), Mat::n(gout), 0.0, dimg);
        } else {
            gemm(kl, g.filters, p, Mat::t(k), Mat::n(gout), 0.0, &mut dcols);
            g.col2im(&dcols, dimg);
        }
    }
    (input_grad.then_some(dx), dk, db)
}

fn maxpool_forward(
    x: &Tensor,
    window: usize,
    stride: usize,
    padding: Padding,
    out_shape: &[usize],
) -> (Vec<f64>, Vec<usize>) {
    let [_, _, h, w] = x.dims4().expect("validated by output_shape");
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let pad_top = conv_output_extent(h, window, stride, padding).map_or(0, |r| r.1);
    let pad_left = conv_output_extent(w, window, stride, padding).map_or(0, |r| r.1);
    let planes = out_shape[0] * out_shape[1];
    let mut data = Vec::with_capacity(planes * oh * ow);
    let mut argmax = Vec::with_capacity(planes * oh * ow);
    let span = |o: usize, pad: usize, extent: usize| {
        let start = (o * stride).saturating_sub(pad);
        let end = (o * stride + window).saturating_sub(pad).min(extent);
        start..end
    };
    if window == 2 && stride == 2 && pad_top == 0 && pad_left == 0 {
        for (pi, plane) in x.data().chunks_exact(h * w).enumerate() {
            for oy in 0..oh {
                let (r0, r1) = (2 * oy * w, (2 * oy + 1) * w);
                for ox in 0..ow {
                    let c = 2 * ox;
                    let mut best = (r0 + c, plane[r0 + c]);
                    for idx in [r0 + c + 1, r1 + c, r1 + c + 1] {
                        if plane[idx] > best.1 {
                            best = (idx, plane[idx]);
                        }
                    }
                    data.push(best.1);
                    argmax.push(pi * h * w + best.0);
                }
            }
        }
        return (data, argmax);
    }
    for (pi, plane) in x.data().chunks_exact(h * w).enumerate() {
        for oy in 0..oh {
            let rows = span(oy, pad_top, h);
            for ox in 0..ow {
                let cols = span(ox, pad_left, w);
                // Row-major scan of the in-bounds part of the window; strict `>` keeps the first maximum.
                let mut best = (usize::MAX, f64::NEG_INFINITY);
                for y in rows.clone() {
                    for xx in cols.clone() {
                        let idx = y * w + xx;
                        if best.0 == usize::MAX || plane[idx] > best.1 {
                            best = (idx, plane[idx]);
                        }
                    }
                }
                data.push(best.1);
                argmax.push(pi * h * w + best.0);
            }
        }
    }
    (data, argmax)
}

fn concat_forward(inputs: &[&Tensor], out_shape: &[usize]) -> Vec<f64> {
    let outer = out_shape[0];
    let inner: usize = out_shape[2..].iter().product();
    let mut out = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for t in inputs {
            let block = t.shape()[1] * inner;
            out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
        }
    }
    out
}

pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<GradPair> {
    Primitive::Dense.forward(&[input, weights, bias], false, &mut crate::rng(0))
}

pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    padding: Padding,
    stride: usize,
) -> Result<GradPair> {
    Primitive::Conv2d { padding, stride }.forward(&[input, kernels, bias], false, &mut crate::rng(0))
}

/// Square-window max pooling; the baseline model uses window 2, stride 2, valid.
pub fn maxpool2d(input: &Tensor, window: usize, stride: usize, padding: Padding) -> Result<GradPair> {
    Primitive::MaxPool2d {
        window,
        stride,
        padding,
    }
    .forward(&[input], false, &mut crate::rng(0))
}

pub fn global_pool(input: &Tensor, mode: PoolMode) -> Result<GradPair> {
    Primitive::GlobalPool { mode }.forward(&[input], false, &mut crate::rng(0))
}

pub fn activation(input: &Tensor, kind: Activation) -> Result<GradPair> {
    Primitive::Activation { kind }.forward(&[input], false, &mut crate::rng(0))
}

pub fn concat(inputs: &[&Tensor]) -> Result<GradPair> {
    Primitive::Concat.forward(inputs, false, &mut crate::rng(0))
}

pub fn add(inputs: &[&Tensor]) -> Result<GradPair> {
    Primitive::Add.forward(inputs, false, &mut crate::rng(0))
}

/// Inverted dropout: survivors are scaled by `1/(1-rate)` so inference is the identity.
pub fn dropout(input: &Tensor, rate: f64, rng: &mut Rng, training: bool) -> Result<GradPair> {
    Primitive::Dropout { rate }.forward(&[input], training, rng)
}

pub fn flatten(input: &Tensor) -> Result<GradPair> {
    Primitive::Flatten.forward(&[input], false, &mut crate::rng(0))
}
