//! Layers with hand-written backward passes. Each layer keeps what its
//! backward pass needs from the last training-mode forward call; gradients
//! accumulate into its parameters until cleared.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NetError, Result};
use crate::tensor::{Mat, MatMut, Real, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, caches kept for backward.
    Train,
    /// Running statistics, nothing cached.
    Eval,
}

/// Trainable tensor with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, value: Vec<T>) -> Self {
        let grad = vec![T::zero(); value.len()];
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    fn normal(name: impl Into<String>, len: usize, std: f64, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(0.0, std).expect("valid std");
        Param::new(name, (0..len).map(|_| T::lit(dist.sample(rng))).collect())
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Non-trainable state saved with the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer<T> {
    pub name: String,
    pub value: Vec<T>,
}

pub trait Layer<T: Real> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>>;
    /// Gradient w.r.t. the input of the last training forward; parameter
    /// gradients are accumulated.
    fn backward(&mut self, dy: &Tensor4<T>) -> Result<Tensor4<T>>;
    fn params(&mut self) -> Vec<&mut Param<T>>;
    fn buffers(&mut self) -> Vec<&mut Buffer<T>> {
        Vec::new()
    }
}

/// Sliding-window geometry shared by convolution and its transpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(channels: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if h + 2 * pad < k || w + 2 * pad < k || stride == 0 {
            return Err(NetError::Shape(format!("{h}×{w} input too small for kernel {k} with padding {pad}")));
        }
        Ok(ConvGeom {
            channels,
            h,
            w,
            k,
            stride,
            pad,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (w + 2 * pad - k) / stride + 1,
        })
    }

    pub fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Input coordinate hit by output `o` at kernel offset `kk`, if inside.
    #[inline]
    fn source(&self, o: usize, kk: usize, size: usize) -> Option<usize> {
        let i = (o * self.stride + kk) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < size).then_some(i as usize)
    }
}

/// Unfolds `img` (`channels × h × w`) into `rows × cols` patches.
pub fn im2col<T: Real>(g: &ConvGeom, img: &[T], cols: &mut [T]) {
    let n = g.cols();
    for c in 0..g.channels {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let out = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.oh {
                    let dst = &mut out[oy * g.ow..(oy + 1) * g.ow];
                    match g.source(oy, ky, g.h) {
                        None => dst.iter_mut().for_each(|v| *v = T::zero()),
                        Some(iy) => {
                            let src = &img[(c * g.h + iy) * g.w..(c * g.h + iy + 1) * g.w];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d = g.source(ox, kx, g.w).map_or(T::zero(), |ix| src[ix]);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patches back into `img`.
pub fn col2im<T: Real>(g: &ConvGeom, cols: &[T], img: &mut [T]) {
    let n = g.cols();
    for c in 0..g.channels {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.oh {
                    let Some(iy) = g.source(oy, ky, g.h) else { continue };
                    let dst = &mut img[(c * g.h + iy) * g.w..(c * g.h + iy + 1) * g.w];
                    for ox in 0..g.ow {
                        if let Some(ix) = g.source(ox, kx, g.w) {
                            dst[ix] = dst[ix] + src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Real>(y: &mut [T], bias: &[T], plane: usize) {
    for (c, &b) in bias.iter().enumerate() {
        y[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v = *v + b);
    }
}

fn accumulate_bias_grad<T: Real>(grad: &mut [T], dy: &[T], plane: usize) {
    for (c, g) in grad.iter_mut().enumerate() {
        *g = dy[c * plane..(c + 1) * plane].iter().fold(*g, |a, &b| a + b);
    }
}

/// 2D convolution, weight laid out `out × in × k × k`.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    cache: Option<(ConvGeom, usize, Vec<T>)>,
}

impl<T: Real> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(name: &str, in_channels: usize, out_channels: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            k,
            stride,
            pad,
            weight: Param::normal(format!("{name}.weight"), out_channels * in_channels * k * k, 0.02, rng),
            bias: Some(Param::new(format!("{name}.bias"), vec![T::zero(); out_channels])),
            cache: None,
        }
    }

    /// Drops the bias, for layers followed by batch norm.
    pub fn without_bias(mut self) -> Self {
        self.bias = None;
        self
    }

    fn geom(&self, x: &Tensor4<T>) -> Result<ConvGeom> {
        let [_, c, h, w] = x.shape();
        if c != self.in_channels {
            return Err(NetError::Shape(format!("{} expects {} channels, got {c}", self.weight.name, self.in_channels)));
        }
        ConvGeom::new(c, h, w, self.k, self.stride, self.pad)
    }
}

impl<T: Real> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let g = self.geom(x)?;
        let (rows, n) = (g.rows(), g.cols());
        let batch = x.batch();
        let mut y = Tensor4::zeros([batch, self.out_channels, g.oh, g.ow]);
        let mut all_cols = vec![T::zero(); batch * rows * n];
        for b in 0..batch {
            let cols = &mut all_cols[b * rows * n..(b + 1) * rows * n];
            im2col(&g, x.item(b), cols);
            let out = y.item_mut(b);
            T::gemm(self.out_channels, rows, n, T::one(), Mat::rows(&self.weight.value, rows), Mat::rows(cols, n), T::zero(), MatMut::rows(out, n));
            if let Some(bias) = &self.bias {
                add_bias(out, &bias.value, n);
            }
        }
        self.cache = (mode == Mode::Train).then_some((g, batch, all_cols));
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (g, batch, all_cols) = self
            .cache
            .as_ref()
            .ok_or_else(|| NetError::Shape(format!("{}: backward without training forward", self.weight.name)))?;
        let (rows, n) = (g.rows(), g.cols());
        if dy.shape() != [*batch, self.out_channels, g.oh, g.ow] {
            return Err(NetError::Shape(format!("{}: gradient shape {:?}", self.weight.name, dy.shape())));
        }
        let mut dx = Tensor4::zeros([*batch, g.channels, g.h, g.w]);
        let mut dcols = vec![T::zero(); rows * n];
        for b in 0..*batch {
            let cols = &all_cols[b * rows * n..(b + 1) * rows * n];
            let d = dy.item(b);
            T::gemm(self.out_channels, n, rows, T::one(), Mat::rows(d, n), Mat::transposed(cols, n), T::one(), MatMut::rows(&mut self.weight.grad, rows));
            if let Some(bias) = &mut self.bias {
                accumulate_bias_grad(&mut bias.grad, d, n);
            }
            T::gemm(rows, self.out_channels, n, T::one(), Mat::transposed(&self.weight.value, rows), Mat::rows(d, n), T::zero(), MatMut::rows(&mut dcols, n));
            col2im(g, &dcols, dx.item_mut(b));
        }
        Ok(dx)
    }

    fn params(&mut self) -> Vec<&mut Param<T>> {
        let mut p = vec![&mut self.weight];
        p.extend(self.bias.as_mut());
        p
    }
}

/// Transposed 2D convolution, weight laid out `in × out × k × k`. The
/// output size is the input size of a [`Conv2d`] with the same geometry
/// whose output is this layer's input.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    cache: Option<Tensor4<T>>,
}

impl<T: Real> ConvTranspose2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(name: &str, in_channels: usize, out_channels: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        ConvTranspose2d {
            in_channels,
            out_channels,
            k,
            stride,
            pad,
            weight: Param::normal(format!("{name}.weight"), in_channels * out_channels * k * k, 0.02, rng),
            bias: Some(Param::new(format!("{name}.bias"), vec![T::zero(); out_channels])),
            cache: None,
        }
    }

    /// Drops the bias, for layers followed by batch norm.
    pub fn without_bias(mut self) -> Self {
        self.bias = None;
        self
    }

    fn geom(&self, shape: [usize; 4]) -> Result<ConvGeom> {
        let [_, c, h, w] = shape;
        if c != self.in_channels {
            return Err(NetError::Shape(format!("{} expects {} channels, got {c}", self.weight.name, self.in_channels)));
        }
        if h == 0 || w == 0 || (h - 1) * self.stride + self.k < 2 * self.pad + 1 {
            return Err(NetError::Shape(format!("{}: input {h}×{w} too small", self.weight.name)));
        }
        let oh = (h - 1) * self.stride + self.k - 2 * self.pad;
        let ow = (w - 1) * self.stride + self.k - 2 * self.pad;
        let g = ConvGeom::new(self.out_channels, oh, ow, self.k, self.stride, self.pad)?;
        debug_assert_eq!((g.oh, g.ow), (h, w));
        Ok(g)
    }
}

impl<T: Real> Layer<T> for ConvTranspose2d<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let g = self.geom(x.shape())?;
        let (rows, n) = (g.rows(), g.cols());
        let batch = x.batch();
        let mut y = Tensor4::zeros([batch, self.out_channels, g.h, g.w]);
        let mut cols = vec![T::zero(); rows * n];
        for b in 0..batch {
            T::gemm(rows, self.in_channels, n, T::one(), Mat::transposed(&self.weight.value, rows), Mat::rows(x.item(b), n), T::zero(), MatMut::rows(&mut cols, n));
            let out = y.item_mut(b);
            col2im(&g, &cols, out);
            if let Some(bias) = &self.bias {
                add_bias(out, &bias.value, g.h * g.w);
            }
        }
        self.cache = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
        let x = self
            .cache
            .as_ref()
            .ok_or_else(|| NetError::Shape(format!("{}: backward without training forward", self.weight.name)))?;
        let g = self.geom(x.shape())?;
        let (rows, n) = (g.rows(), g.cols());
        if dy.shape() != [x.batch(), self.out_channels, g.h, g.w] {
            return Err(NetError::Shape(format!("{}: gradient shape {:?}", self.weight.name, dy.shape())));
        }
        let mut dx = Tensor4::zeros(x.shape());
        let mut dcols = vec![T::zero(); rows * n];
        for b in 0..x.batch() {
            let d = dy.item(b);
            im2col(&g, d, &mut dcols);
            if let Some(bias) = &mut self.bias {
                accumulate_bias_grad(&mut bias.grad, d, g.h * g.w);
            }
            T::gemm(self.in_channels, n, rows, T::one(), Mat::rows(x.item(b), n), Mat::transposed(&dcols, n), T::one(), MatMut::rows(&mut self.weight.grad, rows));
            T::gemm(self.in_channels, rows, n, T::one(), Mat::rows(&self.weight.value, rows), Mat::rows(&dcols, n), T::zero(), MatMut::rows(dx.item_mut(b), n));
        }
        Ok(dx)
    }

    fn params(&mut self) -> Vec<&mut Param<T>> {
        let mut p = vec![&mut self.weight];
        p.extend(self.bias.as_mut());
        p
    }
}

/// Per-channel batch normalization.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Buffer<T>,
    pub running_var: Buffer<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<(Tensor4<T>, Vec<T>)>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(format!("{name}.gamma"), vec![T::one(); channels]),
            beta: Param::new(format!("{name}.beta"), vec![T::zero(); channels]),
            running_mean: Buffer {
                name: format!("{name}.running_mean"),
                value: vec![T::zero(); channels],
            },
            running_var: Buffer {
                name: format!("{name}.running_var"),
                value: vec![T::one(); channels],
            },
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    fn channels(&self) -> usize {
        self.gamma.value.len()
    }
}

impl<T: Real> Layer<T> for BatchNorm2d<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let [batch, c, h, w] = x.shape();
        if c != self.channels() {
            return Err(NetError::Shape(format!("{} expects {} channels, got {c}", self.gamma.name, self.channels())));
        }
        let plane = h * w;
        let count = batch * plane;
        let mut y = Tensor4::zeros(x.shape());
        match mode {
            Mode::Eval => {
                for ch in 0..c {
                    let scale = self.gamma.value[ch] / (self.running_var.value[ch] + T::lit(self.eps)).sqrt();
                    let shift = self.beta.value[ch] - scale * self.running_mean.value[ch];
                    for b in 0..batch {
                        let src = &x.item(b)[ch * plane..(ch + 1) * plane];
                        let dst = &mut y.item_mut(b)[ch * plane..(ch + 1) * plane];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = scale * s + shift;
                        }
                    }
                }
                self.cache = None;
            }
            Mode::Train => {
                if count < 2 {
                    return Err(NetError::Shape(format!("{}: batch statistics need at least 2 values", self.gamma.name)));
                }
                let mut xhat = Tensor4::zeros(x.shape());
                let mut inv_std = vec![T::zero(); c];
                let n = T::lit(count as f64);
                for ch in 0..c {
                    let values = || (0..batch).flat_map(move |b| x.item(b)[ch * plane..(ch + 1) * plane].iter().copied());
                    let mean = values().fold(T::zero(), |a, v| a + v) / n;
                    let var = values().fold(T::zero(), |a, v| a + (v - mean) * (v - mean)) / n;
                    let is = T::one() / (var + T::lit(self.eps)).sqrt();
                    inv_std[ch] = is;
                    for b in 0..batch {
                        let src = &x.item(b)[ch * plane..(ch + 1) * plane];
                        let xh = &mut xhat.item_mut(b)[ch * plane..(ch + 1) * plane];
                        for (d, &s) in xh.iter_mut().zip(src) {
                            *d = (s - mean) * is;
                        }
                        let dst = &mut y.item_mut(b)[ch * plane..(ch + 1) * plane];
                        for (d, &v) in dst.iter_mut().zip(xh.iter()) {
                            *d = self.gamma.value[ch] * v + self.beta.value[ch];
                        }
                    }
                    let m = T::lit(self.momentum);
                    let unbiased = var * n / (n - T::one());
                    self.running_mean.value[ch] = (T::one() - m) * self.running_mean.value[ch] + m * mean;
                    self.running_var.value[ch] = (T::one() - m) * self.running_var.value[ch] + m * unbiased;
                }
                self.cache = Some((xhat, inv_std));
            }
        }
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (xhat, inv_std) = self
            .cache
            .as_ref()
            .ok_or_else(|| NetError::Shape(format!("{}: backward without training forward", self.gamma.name)))?;
        if dy.shape() != xhat.shape() {
            return Err(NetError::Shape(format!("{}: gradient shape {:?}", self.gamma.name, dy.shape())));
        }
        let [batch, c, h, w] = dy.shape();
        let plane = h * w;
        let n = T::lit((batch * plane) as f64);
        let mut dx = Tensor4::zeros(dy.shape());
        for ch in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for b in 0..batch {
                let d = &dy.item(b)[ch * plane..(ch + 1) * plane];
                let xh = &xhat.item(b)[ch * plane..(ch + 1) * plane];
                for (&dv, &xv) in d.iter().zip(xh) {
                    sum_dy = sum_dy + dv;
                    sum_dy_xhat = sum_dy_xhat + dv * xv;
                }
            }
            self.gamma.grad[ch] = self.gamma.grad[ch] + sum_dy_xhat;
            self.beta.grad[ch] = self.beta.grad[ch] + sum_dy;
            let k = self.gamma.value[ch] * inv_std[ch] / n;
            for b in 0..batch {
                let d = &dy.item(b)[ch * plane..(ch + 1) * plane];
                let xh = &xhat.item(b)[ch * plane..(ch + 1) * plane];
                let out = &mut dx.item_mut(b)[ch * plane..(ch + 1) * plane];
                for ((o, &dv), &xv) in out.iter_mut().zip(d).zip(xh) {
                    *o = k * (n * dv - sum_dy - xv * sum_dy_xhat);
                }
            }
        }
        Ok(dx)
    }

    fn params(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn buffers(&mut self) -> Vec<&mut Buffer<T>> {
        vec![&mut self.running_mean, &mut self.running_var]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    Relu,
    LeakyRelu(f64),
    Tanh,
}

#[derive(Debug, Clone)]
pub struct Activation<T> {
    pub kind: ActivationKind,
    cache: Option<Tensor4<T>>,
}

impl<T: Real> Activation<T> {
    pub fn new(kind: ActivationKind) -> Self {
        Activation { kind, cache: None }
    }
}

impl<T: Real> Layer<T> for Activation<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let y = match self.kind {
            ActivationKind::Relu => x.map(|v| v.max(T::zero())),
            ActivationKind::LeakyRelu(a) => {
                let a = T::lit(a);
                x.map(|v| if v > T::zero() { v } else { a * v })
            }
            ActivationKind::Tanh => x.map(|v| v.tanh()),
        };
        self.cache = (mode == Mode::Train).then(|| match self.kind {
            ActivationKind::Tanh => y.clone(),
            _ => x.clone(),
        });
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
        let c = self.cache.as_ref().ok_or_else(|| NetError::Shape("activation: backward without training forward".into()))?;
        if c.shape() != dy.shape() {
            return Err(NetError::Shape(format!("activation: gradient shape {:?}", dy.shape())));
        }
        let slope = match self.kind {
            ActivationKind::Relu => T::zero(),
            ActivationKind::LeakyRelu(a) => T::lit(a),
            ActivationKind::Tanh => T::zero(),
        };
        let data = c
            .data()
            .iter()
            .zip(dy.data())
            .map(|(&v, &d)| match self.kind {
                ActivationKind::Tanh => d * (T::one() - v * v),
                _ => {
                    if v > T::zero() {
                        d
                    } else {
                        slope * d
                    }
                }
            })
            .collect();
        Tensor4::new(dy.shape(), data)
    }

    fn params(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }
}
