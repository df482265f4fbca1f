use serde::{Deserialize, Serialize};

use crate::ops::{self, gemm, Mat, Window};
use crate::tensor::Tensor;

/// A trainable parameter. Prunable weights use the canonical
/// `(out, in, kh, kw)` layout for every layer type.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub shape: [usize; 4],
    pub value: Vec<f32>,
}

impl Param {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            value: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: [usize; 4], v: f32) -> Self {
        Self {
            shape,
            value: vec![v; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for normalization layers.
    Train,
    /// Running statistics for normalization layers.
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu(f32),
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(&self, v: f32) -> f32 {
        match *self {
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu(s) => {
                if v > 0.0 {
                    v
                } else {
                    s * v
                }
            }
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        }
    }

    /// Derivative evaluated at pre-activation `v`.
    fn derivative(&self, v: f32) -> f32 {
        match *self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if v > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-v).exp());
                s * (1.0 - s)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub padding: usize,
}

/// Fully-connected layer. The input sample (C, H, W) is flattened; the
/// weight has shape `(out, C*H*W, 1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub eps: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    ConvTranspose2d(ConvTranspose2d),
    Linear(Linear),
    BatchNorm2d(BatchNorm2d),
    Activation(Activation),
}

/// Per-layer values saved by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub enum Aux {
    None,
    BatchNorm {
        mean: Vec<f32>,
        inv_std: Vec<f32>,
        /// Unbiased batch variance, used for running-statistics updates.
        var_unbiased: Vec<f32>,
    },
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, bias: bool) -> Self {
        Self {
            weight: Param::zeros([out_ch, in_ch, kernel, kernel]),
            bias: bias.then(|| Param::zeros([out_ch, 1, 1, 1])),
            stride,
            padding,
        }
    }

    fn window(&self, x: &Tensor) -> Window {
        let [_, c, h, w] = x.shape();
        Window {
            channels: c,
            height: h,
            width: w,
            kernel: self.weight.shape[2],
            stride: self.stride,
            padding: self.padding,
        }
    }

    pub fn output_shape(&self, input: [usize; 4]) -> Option<[usize; 4]> {
        let [n, c, h, w] = input;
        let k = self.weight.shape[2];
        if c != self.weight.shape[1] || h + 2 * self.padding < k || w + 2 * self.padding < k {
            return None;
        }
        let oh = (h + 2 * self.padding - k) / self.stride + 1;
        let ow = (w + 2 * self.padding - k) / self.stride + 1;
        Some([n, self.weight.shape[0], oh, ow])
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let win = self.window(x);
        let n = x.batch();
        let f = self.weight.shape[0];
        let cols = ops::im2col(x.data(), n, &win);
        let p = win.positions();
        let mut y = vec![0.0; f * n * p];
        gemm(
            Mat::new(&self.weight.value, f, win.col_rows()),
            Mat::new(&cols, win.col_rows(), n * p),
            &mut y,
            0.0,
        );
        let mut out = ops::channel_major_to_batch(&y, n, f, p);
        if let Some(b) = &self.bias {
            add_channel_bias(&mut out, &b.value, n, p);
        }
        Tensor::from_vec([n, f, win.out_height(), win.out_width()], out)
    }

    fn backward(&self, x: &Tensor, dy: &Tensor, grads: Option<&mut [Vec<f32>]>) -> Tensor {
        let win = self.window(x);
        let n = x.batch();
        let f = self.weight.shape[0];
        let p = win.positions();
        let rows = win.col_rows();
        let dy_cm = ops::batch_to_channel_major(dy.data(), n, f, p);
        if let Some(g) = grads {
            let cols = ops::im2col(x.data(), n, &win);
            gemm(
                Mat::new(&dy_cm, f, n * p),
                Mat::new(&cols, rows, n * p).t(),
                &mut g[0],
                1.0,
            );
            if self.bias.is_some() {
                accumulate_channel_sums(&mut g[1], dy.data(), n, f, p);
            }
        }
        let mut dcols = vec![0.0; rows * n * p];
        gemm(
            Mat::new(&self.weight.value, f, rows).t(),
            Mat::new(&dy_cm, f, n * p),
            &mut dcols,
            0.0,
        );
        Tensor::from_vec(x.shape(), ops::col2im(&dcols, n, &win))
    }
}

impl ConvTranspose2d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, bias: bool) -> Self {
        Self {
            weight: Param::zeros([out_ch, in_ch, kernel, kernel]),
            bias: bias.then(|| Param::zeros([out_ch, 1, 1, 1])),
            stride,
            padding,
        }
    }

    pub fn output_shape(&self, input: [usize; 4]) -> Option<[usize; 4]> {
        let [n, c, h, w] = input;
        let k = self.weight.shape[2];
        if c != self.weight.shape[1] {
            return None;
        }
        let oh = ((h - 1) * self.stride + k).checked_sub(2 * self.padding)?;
        let ow = ((w - 1) * self.stride + k).checked_sub(2 * self.padding)?;
        if oh == 0 || ow == 0 {
            return None;
        }
        Some([n, self.weight.shape[0], oh, ow])
    }

    /// Window over the *output* plane; its `positions()` equals the input plane size.
    fn window(&self, out_shape: [usize; 4]) -> Window {
        Window {
            channels: out_shape[1],
            height: out_shape[2],
            width: out_shape[3],
            kernel: self.weight.shape[2],
            stride: self.stride,
            padding: self.padding,
        }
    }

    /// Weight as a `(out*k*k) × in` matrix.
    fn weight_matrix(&self) -> Vec<f32> {
        let [o, i, kh, kw] = self.weight.shape;
        let kk = kh * kw;
        let mut a = vec![0.0; o * kk * i];
        for oc in 0..o {
            for ic in 0..i {
                for t in 0..kk {
                    a[(oc * kk + t) * i + ic] = self.weight.value[(oc * i + ic) * kk + t];
                }
            }
        }
        a
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let out_shape = self.output_shape(x.shape()).expect("deconv input shape");
        let win = self.window(out_shape);
        let n = x.batch();
        let cin = self.weight.shape[1];
        let p = x.shape()[2] * x.shape()[3];
        debug_assert_eq!(p, win.positions());
        let x_cm = ops::batch_to_channel_major(x.data(), n, cin, p);
        let a = self.weight_matrix();
        let mut cols = vec![0.0; win.col_rows() * n * p];
        gemm(
            Mat::new(&a, win.col_rows(), cin),
            Mat::new(&x_cm, cin, n * p),
            &mut cols,
            0.0,
        );
        let mut out = ops::col2im(&cols, n, &win);
        if let Some(b) = &self.bias {
            add_channel_bias(&mut out, &b.value, n, out_shape[2] * out_shape[3]);
        }
        Tensor::from_vec(out_shape, out)
    }

    fn backward(&self, x: &Tensor, dy: &Tensor, grads: Option<&mut [Vec<f32>]>) -> Tensor {
        let win = self.window(dy.shape());
        let n = x.batch();
        let cin = self.weight.shape[1];
        let p = x.shape()[2] * x.shape()[3];
        let rows = win.col_rows();
        let dcols = ops::im2col(dy.data(), n, &win);
        if let Some(g) = grads {
            let x_cm = ops::batch_to_channel_major(x.data(), n, cin, p);
            let mut da = vec![0.0; rows * cin];
            gemm(
                Mat::new(&dcols, rows, n * p),
                Mat::new(&x_cm, cin, n * p).t(),
                &mut da,
                0.0,
            );
            let [o, i, kh, kw] = self.weight.shape;
            let kk = kh * kw;
            for oc in 0..o {
                for ic in 0..i {
                    for t in 0..kk {
                        g[0][(oc * i + ic) * kk + t] += da[(oc * kk + t) * i + ic];
                    }
                }
            }
            if self.bias.is_some() {
                let [_, f, h, w] = dy.shape();
                accumulate_channel_sums(&mut g[1], dy.data(), n, f, h * w);
            }
        }
        let a = self.weight_matrix();
        let mut dx_cm = vec![0.0; cin * n * p];
        gemm(
            Mat::new(&a, rows, cin).t(),
            Mat::new(&dcols, rows, n * p),
            &mut dx_cm,
            0.0,
        );
        Tensor::from_vec(x.shape(), ops::channel_major_to_batch(&dx_cm, n, cin, p))
    }
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, bias: bool) -> Self {
        Self {
            weight: Param::zeros([out_features, in_features, 1, 1]),
            bias: bias.then(|| Param::zeros([out_features, 1, 1, 1])),
        }
    }

    pub fn output_shape(&self, input: [usize; 4]) -> Option<[usize; 4]> {
        let d = input[1] * input[2] * input[3];
        (d == self.weight.shape[1]).then_some([input[0], self.weight.shape[0], 1, 1])
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let n = x.batch();
        let d = x.sample_len();
        let f = self.weight.shape[0];
        let mut y = vec![0.0; n * f];
        if let Some(b) = &self.bias {
            for row in y.chunks_mut(f) {
                row.copy_from_slice(&b.value);
            }
        }
        gemm(
            Mat::new(x.data(), n, d),
            Mat::new(&self.weight.value, f, d).t(),
            &mut y,
            1.0,
        );
        Tensor::from_vec([n, f, 1, 1], y)
    }

    fn backward(&self, x: &Tensor, dy: &Tensor, grads: Option<&mut [Vec<f32>]>) -> Tensor {
        let n = x.batch();
        let d = x.sample_len();
        let f = self.weight.shape[0];
        if let Some(g) = grads {
            gemm(Mat::new(dy.data(), n, f).t(), Mat::new(x.data(), n, d), &mut g[0], 1.0);
            if self.bias.is_some() {
                for row in dy.data().chunks(f) {
                    for (acc, v) in g[1].iter_mut().zip(row) {
                        *acc += *v;
                    }
                }
            }
        }
        let mut dx = vec![0.0; n * d];
        gemm(
            Mat::new(dy.data(), n, f),
            Mat::new(&self.weight.value, f, d),
            &mut dx,
            0.0,
        );
        Tensor::from_vec(x.shape(), dx)
    }
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled([channels, 1, 1, 1], 1.0),
            beta: Param::zeros([channels, 1, 1, 1]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> (Tensor, Aux) {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels(), "batchnorm channel mismatch");
        let plane = h * w;
        let count = (n * plane) as f64;
        let (mean, inv_std, var_unbiased) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0f32; c];
                let mut inv_std = vec![0.0f32; c];
                let mut var_u = vec![0.0f32; c];
                for ch in 0..c {
                    let mut s = 0.0f64;
                    for b in 0..n {
                        let off = (b * c + ch) * plane;
                        s += x.data()[off..off + plane].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    let m = s / count;
                    let mut ss = 0.0f64;
                    for b in 0..n {
                        let off = (b * c + ch) * plane;
                        ss += x.data()[off..off + plane]
                            .iter()
                            .map(|&v| {
                                let d = v as f64 - m;
                                d * d
                            })
                            .sum::<f64>();
                    }
                    let var = ss / count;
                    mean[ch] = m as f32;
                    inv_std[ch] = (1.0 / (var + self.eps as f64).sqrt()) as f32;
                    var_u[ch] = if count > 1.0 { (ss / (count - 1.0)) as f32 } else { var as f32 };
                }
                (mean, inv_std, var_u)
            }
            Mode::Eval => {
                let inv_std = self.running_var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
                (self.running_mean.clone(), inv_std, Vec::new())
            }
        };
        let mut out = vec![0.0; x.numel()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                let (m, s, g, be) = (mean[ch], inv_std[ch], self.gamma.value[ch], self.beta.value[ch]);
                for (o, &v) in out[off..off + plane].iter_mut().zip(&x.data()[off..off + plane]) {
                    *o = (v - m) * s * g + be;
                }
            }
        }
        (
            Tensor::from_vec(x.shape(), out),
            Aux::BatchNorm {
                mean,
                inv_std,
                var_unbiased,
            },
        )
    }

    fn backward(&self, x: &Tensor, aux: &Aux, dy: &Tensor, mode: Mode, grads: Option<&mut [Vec<f32>]>) -> Tensor {
        let Aux::BatchNorm { mean, inv_std, .. } = aux else {
            panic!("batchnorm backward without saved statistics");
        };
        let [n, c, h, w] = x.shape();
        let plane = h * w;
        let m = (n * plane) as f32;
        let mut dx = vec![0.0; x.numel()];
        let mut dgamma = vec![0.0f32; c];
        let mut dbeta = vec![0.0f32; c];
        for ch in 0..c {
            let (mu, s, g) = (mean[ch], inv_std[ch], self.gamma.value[ch]);
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    let xhat = (x.data()[i] - mu) * s;
                    sum_dy += dy.data()[i] as f64;
                    sum_dy_xhat += (dy.data()[i] * xhat) as f64;
                }
            }
            dgamma[ch] = sum_dy_xhat as f32;
            dbeta[ch] = sum_dy as f32;
            match mode {
                Mode::Train => {
                    let mean_dy = sum_dy as f32 / m;
                    let mean_dy_xhat = sum_dy_xhat as f32 / m;
                    for b in 0..n {
                        let off = (b * c + ch) * plane;
                        for i in off..off + plane {
                            let xhat = (x.data()[i] - mu) * s;
                            dx[i] = g * s * (dy.data()[i] - mean_dy - xhat * mean_dy_xhat);
                        }
                    }
                }
                Mode::Eval => {
                    for b in 0..n {
                        let off = (b * c + ch) * plane;
                        for i in off..off + plane {
                            dx[i] = g * s * dy.data()[i];
                        }
                    }
                }
            }
        }
        if let Some(gr) = grads {
            for (a, v) in gr[0].iter_mut().zip(&dgamma) {
                *a += *v;
            }
            for (a, v) in gr[1].iter_mut().zip(&dbeta) {
                *a += *v;
            }
        }
        Tensor::from_vec(x.shape(), dx)
    }

    /// Folds saved batch statistics into the running estimates.
    pub fn update_running(&mut self, aux: &Aux) {
        if let Aux::BatchNorm {
            mean, var_unbiased, ..
        } = aux
        {
            if var_unbiased.is_empty() {
                return;
            }
            let mo = self.momentum;
            for ch in 0..self.channels() {
                self.running_mean[ch] = (1.0 - mo) * self.running_mean[ch] + mo * mean[ch];
                self.running_var[ch] = (1.0 - mo) * self.running_var[ch] + mo * var_unbiased[ch];
            }
        }
    }
}

fn add_channel_bias(out: &mut [f32], bias: &[f32], batch: usize, plane: usize) {
    let c = bias.len();
    for n in 0..batch {
        for (ch, &b) in bias.iter().enumerate() {
            let off = (n * c + ch) * plane;
            for v in &mut out[off..off + plane] {
                *v += b;
            }
        }
    }
}

fn accumulate_channel_sums(acc: &mut [f32], dy: &[f32], batch: usize, channels: usize, plane: usize) {
    for n in 0..batch {
        for ch in 0..channels {
            let off = (n * channels + ch) * plane;
            acc[ch] += dy[off..off + plane].iter().sum::<f32>();
        }
    }
}

impl Layer {
    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv2d(l) => std::iter::once(&l.weight).chain(l.bias.as_ref()).collect(),
            Layer::ConvTranspose2d(l) => std::iter::once(&l.weight).chain(l.bias.as_ref()).collect(),
            Layer::Linear(l) => std::iter::once(&l.weight).chain(l.bias.as_ref()).collect(),
            Layer::BatchNorm2d(l) => vec![&l.gamma, &l.beta],
            Layer::Activation(_) => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv2d(l) => std::iter::once(&mut l.weight).chain(l.bias.as_mut()).collect(),
            Layer::ConvTranspose2d(l) => std::iter::once(&mut l.weight).chain(l.bias.as_mut()).collect(),
            Layer::Linear(l) => std::iter::once(&mut l.weight).chain(l.bias.as_mut()).collect(),
            Layer::BatchNorm2d(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::Activation(_) => Vec::new(),
        }
    }

    /// Names of the entries returned by [`Layer::params`], in order.
    pub fn param_names(&self) -> Vec<&'static str> {
        match self {
            Layer::Conv2d(Conv2d { bias, .. })
            | Layer::ConvTranspose2d(ConvTranspose2d { bias, .. })
            | Layer::Linear(Linear { bias, .. }) => {
                if bias.is_some() {
                    vec!["weight", "bias"]
                } else {
                    vec!["weight"]
                }
            }
            Layer::BatchNorm2d(_) => vec!["gamma", "beta"],
            Layer::Activation(_) => Vec::new(),
        }
    }

    /// The weight subject to pruning, if this layer has one.
    pub fn prunable_weight(&self) -> Option<&Param> {
        match self {
            Layer::Conv2d(l) => Some(&l.weight),
            Layer::ConvTranspose2d(l) => Some(&l.weight),
            Layer::Linear(l) => Some(&l.weight),
            _ => None,
        }
    }

    pub fn prunable_weight_mut(&mut self) -> Option<&mut Param> {
        match self {
            Layer::Conv2d(l) => Some(&mut l.weight),
            Layer::ConvTranspose2d(l) => Some(&mut l.weight),
            Layer::Linear(l) => Some(&mut l.weight),
            _ => None,
        }
    }

    pub fn output_shape(&self, input: [usize; 4]) -> Option<[usize; 4]> {
        match self {
            Layer::Conv2d(l) => l.output_shape(input),
            Layer::ConvTranspose2d(l) => l.output_shape(input),
            Layer::Linear(l) => l.output_shape(input),
            Layer::BatchNorm2d(l) => (input[1] == l.channels()).then_some(input),
            Layer::Activation(_) => Some(input),
        }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> (Tensor, Aux) {
        match self {
            Layer::Conv2d(l) => (l.forward(x), Aux::None),
            Layer::ConvTranspose2d(l) => (l.forward(x), Aux::None),
            Layer::Linear(l) => (l.forward(x), Aux::None),
            Layer::BatchNorm2d(l) => l.forward(x, mode),
            Layer::Activation(a) => (x.map(|v| a.apply(v)), Aux::None),
        }
    }

    /// Returns the input gradient; when `grads` is given, parameter
    /// gradients are accumulated into it (one buffer per entry of `params()`).
    pub fn backward(&self, x: &Tensor, aux: &Aux, dy: &Tensor, mode: Mode, grads: Option<&mut [Vec<f32>]>) -> Tensor {
        match self {
            Layer::Conv2d(l) => l.backward(x, dy, grads),
            Layer::ConvTranspose2d(l) => l.backward(x, dy, grads),
            Layer::Linear(l) => l.backward(x, dy, grads),
            Layer::BatchNorm2d(l) => l.backward(x, aux, dy, mode, grads),
            Layer::Activation(a) => {
                let data = x
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&v, &g)| g * a.derivative(v))
                    .collect();
                Tensor::from_vec(x.shape(), data)
            }
        }
    }
}
