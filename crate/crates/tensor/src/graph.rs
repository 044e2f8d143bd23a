//! Append-only computation tape with reverse-mode differentiation.
//!
//! Every op appends one node holding its output value. `backward` walks the
//! tape in exact reverse append order, so an op can only consume nodes that
//! were appended before it.

use crate::element::{gemm, Element};
use crate::error::{Result, TensorError};
use crate::kernels::conv::{self, ConvGeom, Padding};
use crate::kernels::resample::{self, AxisTaps};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, geom: ConvGeom, batch: usize, c_out: usize },
    // `geom` describes the forward convolution this op is the adjoint of.
    ConvTranspose2d { x: Var, w: Var, geom: ConvGeom, batch: usize, c_in: usize },
    Resample { x: Var, planes: usize, h: usize, w: usize, ys: AxisTaps<T>, xs: AxisTaps<T> },
    Relu { x: Var },
    LeakyRelu { x: Var, slope: T },
    Linear { x: Var, w: Var, b: Option<Var>, batch: usize, fan_in: usize, fan_out: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: T },
    AddScalar { x: Var },
    Square { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    Mse { a: Var, b: Var },
    Concat { parts: Vec<(Var, usize)>, batch: usize, plane: usize },
    Crop { x: Var, dims: [usize; 4], top: usize, left: usize, h: usize, w: usize },
    SubChannel { x: Var },
    CenterChannels { x: Var, channels: usize, inner: usize },
    AddChannelBias { x: Var, b: Var, channels: usize, inner: usize },
    WeightNorm { v: Var, g: Var, axis: usize, norms: Vec<T> },
    Spectral { w: Var, u: Vec<T>, v: Vec<T>, sigma: T },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Conv2d { x, w, .. } | ConvTranspose2d { x, w, .. } => vec![*x, *w],
            Linear { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Add { a, b } | Sub { a, b } | Mul { a, b } | Mse { a, b } => vec![*a, *b],
            Resample { x, .. }
            | Relu { x }
            | LeakyRelu { x, .. }
            | Scale { x, .. }
            | AddScalar { x }
            | Square { x }
            | Sum { x }
            | Mean { x }
            | Crop { x, .. }
            | SubChannel { x }
            | CenterChannels { x, .. }
            | Spectral { w: x, .. } => vec![*x],
            AddChannelBias { x, b, .. } => vec![*x, *b],
            Concat { parts, .. } => parts.iter().map(|p| p.0).collect(),
            WeightNorm { v, g, .. } => vec![*v, *g],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Reverse-mode differentiation tape.
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor. Only leaves created with `requires_grad`
    /// receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn node(&self, v: Var) -> Result<&Node<T>> {
        self.nodes.get(v.0).ok_or(TensorError::UnknownNode(v.0))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`backward`](Self::backward) call.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0)?.grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        let n = self.nodes.get(v.0)?;
        n.grad.as_ref().map(|g| Tensor::from_parts(n.value.shape().to_vec(), g.clone()))
    }

    pub fn scalar(&self, v: Var) -> Result<T> {
        self.node(v)?.value.item()
    }

    fn push(&mut self, name: &'static str, op: Op<T>, value: Tensor<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let mut requires_grad = false;
        for input in op.inputs() {
            requires_grad |= self.node(input)?.requires_grad;
        }
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Ok(Var(self.nodes.len() - 1))
    }

    // ---------------------------------------------------------------------
    // Convolution family

    /// Cross-correlation of `x [B,Cin,H,W]` with `w [Cout,Cin,k,k]`; no bias.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: Padding) -> Result<Var> {
        const OP: &str = "conv2d";
        let (b, c_in, h, wd) = self.node(x)?.value.dims4(OP)?;
        let (c_out, wc, k, k2) = self.node(w)?.value.dims4(OP)?;
        if wc != c_in || k != k2 {
            return Err(shape_err(OP, format!("input has {c_in} channels, weight is {:?}", self.value(w).shape())));
        }
        if k % 2 == 0 || stride == 0 {
            return Err(TensorError::Invalid { op: OP, detail: format!("kernel {k} must be odd, stride {stride} positive") });
        }
        if !self.value(x).is_finite() || !self.value(w).is_finite() {
            return Err(TensorError::NonFinite { op: OP });
        }
        let geom = ConvGeom::new(c_in, h, wd, k, stride, padding)
            .ok_or_else(|| shape_err(OP, format!("kernel {k} larger than input {h}x{wd}")))?;
        let out = conv::conv_forward(self.value(x).data(), b, self.value(w).data(), c_out, &geom);
        let value = Tensor::from_parts(vec![b, c_out, geom.out_h, geom.out_w], out);
        self.push(OP, Op::Conv2d { x, w, geom, batch: b, c_out }, value)
    }

    /// Transposed convolution: `x [B,Cin,h,w]`, `w [Cin,Cout,k,k]` gives
    /// `[B,Cout,h*stride,w*stride]`. It is the exact adjoint of a "same"
    /// [`conv2d`](Self::conv2d) with the same weight and stride.
    pub fn conv2d_transpose(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        const OP: &str = "conv2d_transpose";
        let (b, c_in, h, wd) = self.node(x)?.value.dims4(OP)?;
        let (wc, c_out, k, k2) = self.node(w)?.value.dims4(OP)?;
        if wc != c_in || k != k2 {
            return Err(shape_err(OP, format!("input has {c_in} channels, weight is {:?}", self.value(w).shape())));
        }
        if k % 2 == 0 || !(1..=2).contains(&stride) {
            return Err(TensorError::Invalid { op: OP, detail: format!("kernel {k} must be odd, stride {stride} in 1..=2") });
        }
        if !self.value(x).is_finite() || !self.value(w).is_finite() {
            return Err(TensorError::NonFinite { op: OP });
        }
        let geom = ConvGeom::new(c_out, h * stride, wd * stride, k, stride, Padding::Same)
            .expect("same padding always yields output");
        debug_assert_eq!((geom.out_h, geom.out_w), (h, wd));
        let out = conv::conv_backward_input(self.value(x).data(), b, self.value(w).data(), c_in, &geom);
        let value = Tensor::from_parts(vec![b, c_out, h * stride, wd * stride], out);
        self.push(OP, Op::ConvTranspose2d { x, w, geom, batch: b, c_in }, value)
    }

    /// Align-corners bilinear resampling of the two trailing axes.
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        const OP: &str = "resize_bilinear";
        let shape = self.node(x)?.value.shape().to_vec();
        if shape.len() < 2 {
            return Err(shape_err(OP, format!("need at least 2 axes, got {shape:?}")));
        }
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::Invalid { op: OP, detail: format!("zero-sized target {out_h}x{out_w}") });
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let planes: usize = shape[..shape.len() - 2].iter().product();
        let ys = AxisTaps::new(h, out_h);
        let xs = AxisTaps::new(w, out_w);
        let out = resample::resample_forward(self.value(x).data(), planes, h, w, &ys, &xs);
        let mut out_shape = shape[..shape.len() - 2].to_vec();
        out_shape.extend([out_h, out_w]);
        let value = Tensor::from_parts(out_shape, out);
        self.push(OP, Op::Resample { x, planes, h, w, ys, xs }, value)
    }

    // ---------------------------------------------------------------------
    // Pointwise and reductions

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::LeakyRelu(s) => self.leaky_relu(x, s),
        }
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.node(x)?.value.map(|v| if v > T::zero() { v } else { T::zero() });
        self.push("relu", Op::Relu { x }, value)
    }

    /// Leaky ReLU; at exactly zero the negative-side slope applies.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(TensorError::Invalid { op: "leaky_relu", detail: format!("slope {slope} not in (0,1)") });
        }
        let s = T::from_f64(slope);
        let value = self.node(x)?.value.map(|v| if v > T::zero() { v } else { v * s });
        self.push("leaky_relu", Op::LeakyRelu { x, slope: s }, value)
    }

    /// Affine map of `x [B, ...]` (flattened per batch item) by `w [out, in]`
    /// plus optional `b [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        const OP: &str = "linear";
        let xs = self.node(x)?.value.shape().to_vec();
        let batch = *xs.first().ok_or_else(|| shape_err(OP, "input is rank 0".into()))?;
        let fan_in = if batch == 0 { 0 } else { self.value(x).numel() / batch };
        let (fan_out, wi) = match self.node(w)?.value.shape() {
            &[o, i] => (o, i),
            s => return Err(shape_err(OP, format!("weight must be rank 2, got {s:?}"))),
        };
        if wi != fan_in {
            return Err(shape_err(OP, format!("input has {fan_in} features, weight expects {wi}")));
        }
        let mut out = vec![T::zero(); batch * fan_out];
        gemm(batch, fan_in, fan_out, self.value(x).data(), false, self.value(w).data(), true, &mut out, T::zero());
        if let Some(b) = b {
            let bias = self.node(b)?.value.data();
            if bias.len() != fan_out {
                return Err(shape_err(OP, format!("bias has {} values, expected {fan_out}", bias.len())));
            }
            for row in out.chunks_mut(fan_out) {
                for (o, &bv) in row.iter_mut().zip(bias) {
                    *o += bv;
                }
            }
        }
        let value = Tensor::from_parts(vec![batch, fan_out], out);
        self.push(OP, Op::Linear { x, w, b, batch, fan_in, fan_out }, value)
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (&self.node(a)?.value, &self.node(b)?.value);
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&p, &q)| f(p, q)).collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("add", a, b, |p, q| p + q)?;
        self.push("add", Op::Add { a, b }, value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("sub", a, b, |p, q| p - q)?;
        self.push("sub", Op::Sub { a, b }, value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("mul", a, b, |p, q| p * q)?;
        self.push("mul", Op::Mul { a, b }, value)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let value = self.node(x)?.value.map(|v| v * c);
        self.push("scale", Op::Scale { x, c }, value)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        let value = self.node(x)?.value.map(|v| v + c);
        self.push("add_scalar", Op::AddScalar { x }, value)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let value = self.node(x)?.value.map(|v| v * v);
        self.push("square", Op::Square { x }, value)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.node(x)?.value.data().iter().copied().sum();
        self.push("sum", Op::Sum { x }, Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = &self.node(x)?.value;
        if t.numel() == 0 {
            return Err(TensorError::Invalid { op: "mean", detail: "empty tensor".into() });
        }
        let s: T = t.data().iter().copied().sum::<T>() / T::from_f64(t.numel() as f64);
        self.push("mean", Op::Mean { x }, Tensor::scalar(s))
    }

    /// Mean squared difference of two same-shape tensors, as a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let diff = self.zip_same("mse", a, b, |p, q| p - q)?;
        if diff.numel() == 0 {
            return Err(TensorError::Invalid { op: "mse", detail: "empty tensors".into() });
        }
        let s = diff.data().iter().map(|&d| d * d).sum::<T>() / T::from_f64(diff.numel() as f64);
        self.push("mse", Op::Mse { a, b }, Tensor::scalar(s))
    }

    // ---------------------------------------------------------------------
    // Structural ops on `[B,C,H,W]`

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        const OP: &str = "concat_channels";
        let first = *xs.first().ok_or_else(|| shape_err(OP, "no inputs".into()))?;
        let (b, _, h, w) = self.node(first)?.value.dims4(OP)?;
        let mut parts = Vec::with_capacity(xs.len());
        for &x in xs {
            let (bb, c, hh, ww) = self.node(x)?.value.dims4(OP)?;
            if (bb, hh, ww) != (b, h, w) {
                return Err(shape_err(OP, format!("{:?} vs {:?}", self.value(first).shape(), self.value(x).shape())));
            }
            parts.push((x, c));
        }
        let total: usize = parts.iter().map(|p| p.1).sum();
        let plane = h * w;
        let mut out = Vec::with_capacity(b * total * plane);
        for bi in 0..b {
            for &(x, c) in &parts {
                out.extend_from_slice(&self.value(x).data()[bi * c * plane..(bi + 1) * c * plane]);
            }
        }
        let value = Tensor::from_parts(vec![b, total, h, w], out);
        self.push(OP, Op::Concat { parts, batch: b, plane }, value)
    }

    /// Spatial window `[top..top+h, left..left+w]` of every plane.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        const OP: &str = "crop";
        let (b, c, ih, iw) = self.node(x)?.value.dims4(OP)?;
        if h == 0 || w == 0 || top + h > ih || left + w > iw {
            return Err(shape_err(OP, format!("window {h}x{w} at ({top},{left}) outside {ih}x{iw}")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(b * c * h * w);
        for p in 0..b * c {
            for y in top..top + h {
                let row = p * ih * iw + y * iw;
                out.extend_from_slice(&src[row + left..row + left + w]);
            }
        }
        let value = Tensor::from_parts(vec![b, c, h, w], out);
        self.push(OP, Op::Crop { x, dims: [b, c, ih, iw], top, left, h, w }, value)
    }

    fn channel_layout(&self, op: &'static str, x: Var, channels: usize) -> Result<(usize, usize)> {
        let shape = self.node(x)?.value.shape();
        if shape.len() < 2 || shape[1] != channels {
            return Err(shape_err(op, format!("expected {channels} channels on axis 1 of {shape:?}")));
        }
        Ok((shape[0], shape[2..].iter().product()))
    }

    /// Subtracts a constant per channel (axis 1). Gradient passes through.
    pub fn sub_channel(&mut self, x: Var, means: &[T]) -> Result<Var> {
        let (outer, inner) = self.channel_layout("sub_channel", x, means.len())?;
        let mut value = self.value(x).clone();
        let c = means.len();
        for o in 0..outer {
            for (ci, &m) in means.iter().enumerate() {
                let s = (o * c + ci) * inner;
                for v in &mut value.data_mut()[s..s + inner] {
                    *v -= m;
                }
            }
        }
        self.push("sub_channel", Op::SubChannel { x }, value)
    }

    /// Subtracts each channel's own mean (over batch and spatial axes).
    /// Unlike [`sub_channel`](Self::sub_channel) the means depend on `x`, so
    /// the gradient is centered per channel as well.
    pub fn center_channels(&mut self, x: Var) -> Result<Var> {
        let shape = self.node(x)?.value.shape().to_vec();
        if shape.len() < 2 {
            return Err(shape_err("center_channels", format!("need a channel axis, got {shape:?}")));
        }
        let channels = shape[1];
        let (outer, inner) = self.channel_layout("center_channels", x, channels)?;
        let means = channel_sums(self.value(x).data(), outer, channels, inner, T::from_f64(1.0 / (outer * inner).max(1) as f64));
        let mut value = self.value(x).clone();
        for o in 0..outer {
            for (ci, &m) in means.iter().enumerate() {
                let s = (o * channels + ci) * inner;
                for v in &mut value.data_mut()[s..s + inner] {
                    *v -= m;
                }
            }
        }
        self.push("center_channels", Op::CenterChannels { x, channels, inner }, value)
    }

    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let channels = self.node(b)?.value.numel();
        let (outer, inner) = self.channel_layout("add_channel_bias", x, channels)?;
        let mut value = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for o in 0..outer {
            for (ci, &bv) in bias.iter().enumerate() {
                let s = (o * channels + ci) * inner;
                for v in &mut value.data_mut()[s..s + inner] {
                    *v += bv;
                }
            }
        }
        self.push("add_channel_bias", Op::AddChannelBias { x, b, channels, inner }, value)
    }

    // ---------------------------------------------------------------------
    // Weight reparameterizations

    /// `scale_c * v / ||v_c||`, where `v_c` is the slice of `v` whose index on
    /// `axis` (0 or 1) is `c`.
    pub fn weight_norm(&mut self, v: Var, g: Var, axis: usize) -> Result<Var> {
        const OP: &str = "weight_norm";
        let shape = self.node(v)?.value.shape().to_vec();
        if shape.len() < 2 || axis > 1 {
            return Err(shape_err(OP, format!("axis {axis} on shape {shape:?}")));
        }
        let channels = shape[axis];
        let scales = self.node(g)?.value.data().to_vec();
        if scales.len() != channels {
            return Err(shape_err(OP, format!("{} scales for {channels} channels", scales.len())));
        }
        let layout = ChannelMap::new(&shape, axis);
        let raw = self.value(v).data();
        let mut sq = vec![T::zero(); channels];
        for (i, &x) in raw.iter().enumerate() {
            sq[layout.channel(i)] += x * x;
        }
        let norms: Vec<T> = sq.into_iter().map(|s| s.sqrt()).collect();
        if norms.iter().any(|n| *n <= T::zero()) {
            return Err(TensorError::Invalid { op: OP, detail: "a channel of the raw weight is all zero".into() });
        }
        let data = raw
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = layout.channel(i);
                scales[c] * x / norms[c]
            })
            .collect();
        let value = Tensor::from_parts(shape, data);
        self.push(OP, Op::WeightNorm { v, g, axis, norms }, value)
    }

    /// `w / sigma` with `sigma = uᵀ W v` for `W` the `[shape[0], rest]` matrix
    /// view of `w`. `u` and `v` are constants supplied by the caller.
    pub fn spectral_normalize(&mut self, w: Var, u: &[T], v: &[T]) -> Result<Var> {
        const OP: &str = "spectral_normalize";
        let t = &self.node(w)?.value;
        let rows = *t.shape().first().unwrap_or(&0);
        let cols = if rows == 0 { 0 } else { t.numel() / rows };
        if t.rank() < 2 || u.len() != rows || v.len() != cols {
            return Err(shape_err(OP, format!("weight {:?} with u[{}], v[{}]", t.shape(), u.len(), v.len())));
        }
        let sigma = bilinear_form(t.data(), u, v);
        if !(sigma > T::zero()) || !sigma.is_finite() {
            return Err(TensorError::Invalid { op: OP, detail: format!("spectral estimate {sigma} is not positive") });
        }
        let value = t.map(|x| x / sigma);
        self.push(OP, Op::Spectral { w, u: u.to_vec(), v: v.to_vec(), sigma }, value)
    }

    // ---------------------------------------------------------------------
    // Backward

    /// Populates gradients of `loss` on every node that requires them.
    ///
    /// Gradients from a previous call are cleared first. Node values are
    /// left untouched.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.node(loss)?.value.shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NotScalar(shape));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else { continue };
            let contribs = self.input_grads(i, &g);
            self.nodes[i].grad = Some(g);
            for (input, d) in contribs {
                if input.0 >= i {
                    return Err(TensorError::Cycle { node: i, input: input.0 });
                }
                let node = &mut self.nodes[input.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(d) {
                            *a += v;
                        }
                    }
                    None => node.grad = Some(d),
                }
            }
        }
        Ok(())
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn input_grads(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let mut out = Vec::new();
        let val = |v: Var| self.nodes[v.0].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, geom, batch, c_out } => {
                if self.rg(*x) {
                    out.push((*x, conv::conv_backward_input(g, *batch, val(*w), *c_out, geom)));
                }
                if self.rg(*w) {
                    out.push((*w, conv::conv_backward_weight(val(*x), g, *batch, *c_out, geom)));
                }
            }
            Op::ConvTranspose2d { x, w, geom, batch, c_in } => {
                if self.rg(*x) {
                    out.push((*x, conv::conv_forward(g, *batch, val(*w), *c_in, geom)));
                }
                if self.rg(*w) {
                    out.push((*w, conv::conv_backward_weight(g, val(*x), *batch, *c_in, geom)));
                }
            }
            Op::Resample { x, planes, h, w, ys, xs } => {
                out.push((*x, resample::resample_backward(g, *planes, *h, *w, ys, xs)));
            }
            Op::Relu { x } => {
                let d = val(*x).iter().zip(g).map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() });
                out.push((*x, d.collect()));
            }
            Op::LeakyRelu { x, slope } => {
                let d = val(*x).iter().zip(g).map(|(&xv, &gv)| if xv > T::zero() { gv } else { gv * *slope });
                out.push((*x, d.collect()));
            }
            Op::Linear { x, w, b, batch, fan_in, fan_out } => {
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); batch * fan_in];
                    gemm(*batch, *fan_out, *fan_in, g, false, val(*w), false, &mut dx, T::zero());
                    out.push((*x, dx));
                }
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); fan_out * fan_in];
                    gemm(*fan_out, *batch, *fan_in, g, true, val(*x), false, &mut dw, T::zero());
                    out.push((*w, dw));
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        let mut db = vec![T::zero(); *fan_out];
                        for row in g.chunks(*fan_out) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        out.push((*b, db));
                    }
                }
            }
            Op::Add { a, b } => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Sub { a, b } => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.iter().map(|&v| -v).collect()));
            }
            Op::Mul { a, b } => {
                out.push((*a, g.iter().zip(val(*b)).map(|(&gv, &bv)| gv * bv).collect()));
                out.push((*b, g.iter().zip(val(*a)).map(|(&gv, &av)| gv * av).collect()));
            }
            Op::Scale { x, c } => out.push((*x, g.iter().map(|&v| v * *c).collect())),
            Op::AddScalar { x } | Op::SubChannel { x } => out.push((*x, g.to_vec())),
            Op::CenterChannels { x, channels, inner } => {
                let outer = g.len() / (channels * inner).max(1);
                let means = channel_sums(g, outer, *channels, *inner, T::from_f64(1.0 / (outer * inner).max(1) as f64));
                let mut d = g.to_vec();
                for o in 0..outer {
                    for (ci, &m) in means.iter().enumerate() {
                        let s = (o * channels + ci) * inner;
                        for v in &mut d[s..s + inner] {
                            *v -= m;
                        }
                    }
                }
                out.push((*x, d));
            }
            Op::Square { x } => {
                let two = T::from_f64(2.0);
                out.push((*x, val(*x).iter().zip(g).map(|(&xv, &gv)| two * xv * gv).collect()));
            }
            Op::Sum { x } => out.push((*x, vec![g[0]; val(*x).len()])),
            Op::Mean { x } => {
                let n = val(*x).len();
                out.push((*x, vec![g[0] / T::from_f64(n as f64); n]));
            }
            Op::Mse { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                let k = T::from_f64(2.0) * g[0] / T::from_f64(av.len() as f64);
                let da: Vec<T> = av.iter().zip(bv).map(|(&p, &q)| k * (p - q)).collect();
                let db = da.iter().map(|&v| -v).collect();
                out.push((*a, da));
                out.push((*b, db));
            }
            Op::Concat { parts, batch, plane } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(x, c) in parts {
                    let mut d = Vec::with_capacity(batch * c * plane);
                    for bi in 0..*batch {
                        let s = (bi * total + offset) * plane;
                        d.extend_from_slice(&g[s..s + c * plane]);
                    }
                    out.push((x, d));
                    offset += c;
                }
            }
            Op::Crop { x, dims, top, left, h, w } => {
                let [b, c, ih, iw] = *dims;
                let mut d = vec![T::zero(); b * c * ih * iw];
                for p in 0..b * c {
                    for y in 0..*h {
                        let dst = p * ih * iw + (top + y) * iw + left;
                        let src = (p * h + y) * w;
                        d[dst..dst + w].copy_from_slice(&g[src..src + w]);
                    }
                }
                out.push((*x, d));
            }
            Op::AddChannelBias { x, b, channels, inner } => {
                out.push((*x, g.to_vec()));
                let mut db = vec![T::zero(); *channels];
                for (blk, chunk) in g.chunks(*inner).enumerate() {
                    db[blk % channels] += chunk.iter().copied().sum::<T>();
                }
                out.push((*b, db));
            }
            Op::WeightNorm { v, g: gs, axis, norms } => {
                let raw = val(*v);
                let scales = val(*gs);
                let layout = ChannelMap::new(self.nodes[v.0].value.shape(), *axis);
                let mut dot = vec![T::zero(); norms.len()];
                for (idx, (&gv, &rv)) in g.iter().zip(raw).enumerate() {
                    dot[layout.channel(idx)] += gv * rv;
                }
                if self.rg(*gs) {
                    out.push((*gs, dot.iter().zip(norms).map(|(&d, &n)| d / n).collect()));
                }
                if self.rg(*v) {
                    let dv = g
                        .iter()
                        .zip(raw)
                        .enumerate()
                        .map(|(idx, (&gv, &rv))| {
                            let c = layout.channel(idx);
                            let n = norms[c];
                            scales[c] / n * (gv - dot[c] / (n * n) * rv)
                        })
                        .collect();
                    out.push((*v, dv));
                }
            }
            Op::Spectral { w, u, v, sigma } => {
                let wv = val(*w);
                let gw: T = g.iter().zip(wv).map(|(&a, &b)| a * b).sum();
                let k = gw / (*sigma * *sigma);
                let cols = v.len();
                let d = g
                    .iter()
                    .enumerate()
                    .map(|(idx, &gv)| gv / *sigma - k * u[idx / cols] * v[idx % cols])
                    .collect();
                out.push((*w, d));
            }
        }
        out
    }
}

/// `uᵀ W v` for row-major `W [u.len(), v.len()]`.
/// Per-channel sums of a `[outer, channels, inner]` layout, times `scale`.
fn channel_sums<T: Element>(data: &[T], outer: usize, channels: usize, inner: usize, scale: T) -> Vec<T> {
    let mut sums = vec![T::zero(); channels];
    for o in 0..outer {
        for (ci, acc) in sums.iter_mut().enumerate() {
            let s = (o * channels + ci) * inner;
            *acc += data[s..s + inner].iter().copied().sum::<T>();
        }
    }
    sums.into_iter().map(|v| v * scale).collect()
}

pub fn bilinear_form<T: Element>(w: &[T], u: &[T], v: &[T]) -> T {
    let cols = v.len();
    u.iter()
        .enumerate()
        .map(|(r, &ur)| ur * w[r * cols..(r + 1) * cols].iter().zip(v).map(|(&a, &b)| a * b).sum::<T>())
        .sum()
}

/// Maps a flat index to its channel on axis 0 or 1.
struct ChannelMap {
    axis: usize,
    block: usize,
    channels: usize,
}

impl ChannelMap {
    fn new(shape: &[usize], axis: usize) -> Self {
        let block = shape[axis + 1..].iter().product();
        Self { axis, block, channels: shape[axis] }
    }

    #[inline]
    fn channel(&self, idx: usize) -> usize {
        if self.axis == 0 {
            idx / self.block
        } else {
            (idx / self.block) % self.channels
        }
    }
}
