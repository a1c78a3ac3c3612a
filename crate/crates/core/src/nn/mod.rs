//! A small reverse-mode network toolkit: enough layers to express the
//! detector backbones, the toy decoders and the deep-image-prior generator.
//!
//! Networks process one `C×H×W` sample at a time; mini-batches accumulate
//! gradients sample by sample, so a sample's output never depends on the
//! rest of its batch.

mod conv;
mod optim;

pub use conv::{reflect_index, Conv2d, Padding};
pub use optim::Adam;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    Nearest,
    Bilinear,
}

/// Per-channel `y = x·scale + shift` (a frozen batch-norm).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAffine<T> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

/// Fully connected layer over the flattened input.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_f: usize,
    pub out_f: usize,
    /// `out_f × in_f`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// `relu(main(x) + shortcut(x))`; identity shortcut when `shortcut` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual<T> {
    pub main: Sequential<T>,
    pub shortcut: Option<Sequential<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    Affine(ChannelAffine<T>),
    Linear(Linear<T>),
    Relu,
    LeakyRelu(T),
    Sigmoid,
    Tanh,
    MaxPool { k: usize, stride: usize, pad: usize },
    /// Non-overlapping `k×k` mean; trailing rows/columns that do not fill a
    /// window are dropped.
    AvgPool { k: usize },
    GlobalAvgPool,
    Upsample { factor: usize, mode: UpsampleMode },
    Residual(Box<Residual<T>>),
}

#[derive(Debug)]
pub enum Cache<T> {
    Conv { cols: Vec<T>, in_shape: (usize, usize, usize) },
    Input(Tensor<T>),
    Output(Tensor<T>),
    MaxPool { argmax: Vec<usize>, in_shape: (usize, usize, usize) },
    Shape((usize, usize, usize)),
    Residual {
        main: Vec<Cache<T>>,
        shortcut: Option<Vec<Cache<T>>>,
        output: Tensor<T>,
    },
}

/// Ordered stack of layers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

/// Gradient buffers in the same order as [`Sequential::params`].
pub type Grads<T> = Vec<Vec<T>>;

impl<T: Scalar> Layer<T> {
    fn param_count(&self) -> usize {
        match self {
            Layer::Conv(_) | Layer::Affine(_) | Layer::Linear(_) => 2,
            Layer::Residual(r) => r.main.param_count() + r.shortcut.as_ref().map_or(0, |s| s.param_count()),
            _ => 0,
        }
    }

    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Vec<T>>) {
        match self {
            Layer::Conv(c) => out.extend([&c.weight, &c.bias]),
            Layer::Affine(a) => out.extend([&a.scale, &a.shift]),
            Layer::Linear(l) => out.extend([&l.weight, &l.bias]),
            Layer::Residual(r) => {
                r.main.layers.iter().for_each(|l| l.collect_params(out));
                if let Some(s) = &r.shortcut {
                    s.layers.iter().for_each(|l| l.collect_params(out));
                }
            }
            _ => {}
        }
    }

    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Vec<T>>) {
        match self {
            Layer::Conv(c) => out.extend([&mut c.weight, &mut c.bias]),
            Layer::Affine(a) => out.extend([&mut a.scale, &mut a.shift]),
            Layer::Linear(l) => out.extend([&mut l.weight, &mut l.bias]),
            Layer::Residual(r) => {
                r.main.layers.iter_mut().for_each(|l| l.collect_params_mut(out));
                if let Some(s) = &mut r.shortcut {
                    s.layers.iter_mut().for_each(|l| l.collect_params_mut(out));
                }
            }
            _ => {}
        }
    }

    fn forward(&self, x: Tensor<T>, keep: bool) -> (Tensor<T>, Option<Cache<T>>) {
        match self {
            Layer::Conv(conv) => {
                let in_shape = x.shape();
                let (y, cols) = conv.forward(&x);
                (y, keep.then_some(Cache::Conv { cols, in_shape }))
            }
            Layer::Affine(a) => {
                let mut y = x.clone();
                for c in 0..y.c {
                    let (s, b) = (a.scale[c], a.shift[c]);
                    y.plane_mut(c).iter_mut().for_each(|v| *v = *v * s + b);
                }
                (y, keep.then_some(Cache::Input(x)))
            }
            Layer::Linear(l) => {
                assert_eq!(x.data.len(), l.in_f, "linear input size");
                let mut y = Tensor::zeros(l.out_f, 1, 1);
                for o in 0..l.out_f {
                    let row = &l.weight[o * l.in_f..(o + 1) * l.in_f];
                    y.data[o] = l.bias[o] + row.iter().zip(&x.data).map(|(w, v)| *w * *v).sum::<T>();
                }
                (y, keep.then_some(Cache::Input(x)))
            }
            Layer::Relu => {
                let mut y = x;
                y.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
                let cache = keep.then(|| Cache::Output(y.clone()));
                (y, cache)
            }
            Layer::LeakyRelu(slope) => {
                let mut y = x.clone();
                y.data.iter_mut().for_each(|v| {
                    if *v < T::zero() {
                        *v *= *slope
                    }
                });
                (y, keep.then_some(Cache::Input(x)))
            }
            Layer::Sigmoid => {
                let mut y = x;
                y.data.iter_mut().for_each(|v| *v = sigmoid(*v));
                let cache = keep.then(|| Cache::Output(y.clone()));
                (y, cache)
            }
            Layer::Tanh => {
                let mut y = x;
                y.data.iter_mut().for_each(|v| *v = v.tanh());
                let cache = keep.then(|| Cache::Output(y.clone()));
                (y, cache)
            }
            Layer::MaxPool { k, stride, pad } => {
                let (y, argmax) = max_pool(&x, *k, *stride, *pad);
                (y, keep.then_some(Cache::MaxPool { argmax, in_shape: x.shape() }))
            }
            Layer::AvgPool { k } => (avg_pool(&x, *k), keep.then_some(Cache::Shape(x.shape()))),
            Layer::GlobalAvgPool => {
                let n = T::lit((x.h * x.w) as f64);
                let data = (0..x.c).map(|c| x.plane(c).iter().copied().sum::<T>() / n).collect();
                (Tensor { c: x.c, h: 1, w: 1, data }, keep.then_some(Cache::Shape(x.shape())))
            }
            Layer::Upsample { factor, mode } => {
                let y = match mode {
                    UpsampleMode::Nearest => upsample_nearest(&x, *factor),
                    UpsampleMode::Bilinear => upsample_bilinear(&x, *factor),
                };
                (y, keep.then_some(Cache::Shape(x.shape())))
            }
            Layer::Residual(r) => {
                let (main_out, main_cache) = r.main.run(x.clone(), keep);
                let (short_out, short_cache) = match &r.shortcut {
                    Some(s) => {
                        let (o, c) = s.run(x, keep);
                        (o, Some(c))
                    }
                    None => (x, None),
                };
                let mut y = main_out;
                assert_eq!(y.shape(), short_out.shape(), "residual branch shapes");
                y.data
                    .iter_mut()
                    .zip(&short_out.data)
                    .for_each(|(a, b)| *a = (*a + *b).max(T::zero()));
                let cache = keep.then(|| Cache::Residual {
                    main: main_cache,
                    shortcut: short_cache,
                    output: y.clone(),
                });
                (y, cache)
            }
        }
    }

    fn backward(&self, cache: Cache<T>, dy: Tensor<T>, grads: &mut [Vec<T>], need_dx: bool) -> Option<Tensor<T>> {
        match (self, cache) {
            (Layer::Conv(conv), Cache::Conv { cols, in_shape }) => {
                let (gw, rest) = grads.split_at_mut(1);
                conv.backward(&cols, in_shape, &dy, &mut gw[0], &mut rest[0], need_dx)
            }
            (Layer::Affine(a), Cache::Input(x)) => {
                let mut dx = dy.clone();
                for c in 0..x.c {
                    let (xs, ds) = (x.plane(c), dy.plane(c));
                    grads[0][c] += xs.iter().zip(ds).map(|(x, d)| *x * *d).sum::<T>();
                    grads[1][c] += ds.iter().copied().sum::<T>();
                    let s = a.scale[c];
                    dx.plane_mut(c).iter_mut().for_each(|v| *v *= s);
                }
                need_dx.then_some(dx)
            }
            (Layer::Linear(l), Cache::Input(x)) => {
                let mut dx = Tensor::zeros(x.c, x.h, x.w);
                for o in 0..l.out_f {
                    let d = dy.data[o];
                    grads[1][o] += d;
                    let gw = &mut grads[0][o * l.in_f..(o + 1) * l.in_f];
                    gw.iter_mut().zip(&x.data).for_each(|(g, v)| *g += d * *v);
                    if need_dx {
                        let row = &l.weight[o * l.in_f..(o + 1) * l.in_f];
                        dx.data.iter_mut().zip(row).for_each(|(g, w)| *g += d * *w);
                    }
                }
                need_dx.then_some(dx)
            }
            (Layer::Relu, Cache::Output(y)) => {
                let mut dx = dy;
                dx.data.iter_mut().zip(&y.data).for_each(|(d, y)| {
                    if *y <= T::zero() {
                        *d = T::zero()
                    }
                });
                need_dx.then_some(dx)
            }
            (Layer::LeakyRelu(slope), Cache::Input(x)) => {
                let mut dx = dy;
                dx.data.iter_mut().zip(&x.data).for_each(|(d, x)| {
                    if *x < T::zero() {
                        *d *= *slope
                    }
                });
                need_dx.then_some(dx)
            }
            (Layer::Sigmoid, Cache::Output(y)) => {
                let mut dx = dy;
                dx.data.iter_mut().zip(&y.data).for_each(|(d, y)| *d *= *y * (T::one() - *y));
                need_dx.then_some(dx)
            }
            (Layer::Tanh, Cache::Output(y)) => {
                let mut dx = dy;
                dx.data.iter_mut().zip(&y.data).for_each(|(d, y)| *d *= T::one() - *y * *y);
                need_dx.then_some(dx)
            }
            (Layer::MaxPool { .. }, Cache::MaxPool { argmax, in_shape }) => {
                let (c, h, w) = in_shape;
                let mut dx = Tensor::zeros(c, h, w);
                for (i, &src) in argmax.iter().enumerate() {
                    dx.data[src] += dy.data[i];
                }
                need_dx.then_some(dx)
            }
            (Layer::AvgPool { k }, Cache::Shape((c, h, w))) => {
                need_dx.then(|| avg_pool_backward(&dy, *k, c, h, w))
            }
            (Layer::GlobalAvgPool, Cache::Shape((c, h, w))) => need_dx.then(|| {
                let n = T::lit((h * w) as f64);
                let mut dx = Tensor::zeros(c, h, w);
                for ch in 0..c {
                    let g = dy.data[ch] / n;
                    dx.plane_mut(ch).iter_mut().for_each(|v| *v = g);
                }
                dx
            }),
            (Layer::Upsample { factor, mode }, Cache::Shape((c, h, w))) => need_dx.then(|| match mode {
                UpsampleMode::Nearest => upsample_nearest_backward(&dy, *factor, c, h, w),
                UpsampleMode::Bilinear => upsample_bilinear_backward(&dy, *factor, c, h, w),
            }),
            (Layer::Residual(r), Cache::Residual { main, shortcut, output }) => {
                let mut g = dy;
                g.data.iter_mut().zip(&output.data).for_each(|(d, y)| {
                    if *y <= T::zero() {
                        *d = T::zero()
                    }
                });
                let n_main = r.main.param_count();
                let (g_main, g_short) = grads.split_at_mut(n_main);
                let need_branch_dx = need_dx;
                let dmain = r.main.backward(main, g.clone(), g_main, need_branch_dx);
                let dshort = match (&r.shortcut, shortcut) {
                    (Some(s), Some(c)) => s.backward(c, g, g_short, need_branch_dx),
                    _ => Some(g),
                };
                if !need_dx {
                    return None;
                }
                let mut dx = dmain.expect("main branch gradient");
                let ds = dshort.expect("shortcut gradient");
                dx.data.iter_mut().zip(&ds.data).for_each(|(a, b)| *a += *b);
                Some(dx)
            }
            _ => unreachable!("cache does not match layer"),
        }
    }
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Sequential { layers }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn params(&self) -> Vec<&Vec<T>> {
        let mut out = Vec::new();
        self.layers.iter().for_each(|l| l.collect_params(&mut out));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        self.layers.iter_mut().for_each(|l| l.collect_params_mut(&mut out));
        out
    }

    pub fn num_weights(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads<T> {
        self.params().iter().map(|p| vec![T::zero(); p.len()]).collect()
    }

    fn run(&self, x: Tensor<T>, keep: bool) -> (Tensor<T>, Vec<Cache<T>>) {
        let mut caches = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        let mut x = x;
        for layer in &self.layers {
            let (y, cache) = layer.forward(x, keep);
            if let Some(c) = cache {
                caches.push(c);
            }
            x = y;
        }
        (x, caches)
    }

    /// Inference pass. Bit-identical to the output of [`Sequential::forward_train`].
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.run(x.clone(), false).0
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, Vec<Cache<T>>) {
        self.run(x.clone(), true)
    }

    /// Accumulates parameter gradients into `grads` (laid out as
    /// [`Sequential::params`]) and returns the input gradient if requested.
    pub fn backward(&self, caches: Vec<Cache<T>>, dy: Tensor<T>, grads: &mut [Vec<T>], need_dx: bool) -> Option<Tensor<T>> {
        assert_eq!(caches.len(), self.layers.len(), "one cache per layer");
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            offsets.push(acc);
            acc += l.param_count();
        }
        let mut dy = Some(dy);
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let g = dy.take().expect("upstream gradient");
            let n = layer.param_count();
            let slot = &mut grads[offsets[i]..offsets[i] + n];
            // The first layer's input gradient is only needed if the caller asks.
            let want = i > 0 || need_dx;
            dy = layer.backward(cache, g, slot, want);
            if !want {
                return None;
            }
        }
        dy
    }

    /// He-normal initialization of every convolution and linear weight;
    /// biases and affine shifts are zeroed and affine scales set to one.
    pub fn init_he<R: Rng>(&mut self, rng: &mut R) {
        for layer in &mut self.layers {
            init_layer(layer, rng, 1.0);
        }
    }
}

fn init_layer<T: Scalar, R: Rng>(layer: &mut Layer<T>, rng: &mut R, gain: f64) {
    match layer {
        Layer::Conv(c) => {
            let std = gain * (2.0 / (c.in_c * c.k * c.k) as f64).sqrt();
            fill_normal(&mut c.weight, rng, std);
            c.bias.iter_mut().for_each(|b| *b = T::zero());
        }
        Layer::Linear(l) => {
            let std = gain * (1.0 / l.in_f as f64).sqrt();
            fill_normal(&mut l.weight, rng, std);
            l.bias.iter_mut().for_each(|b| *b = T::zero());
        }
        Layer::Affine(a) => {
            a.scale.iter_mut().for_each(|s| *s = T::one());
            a.shift.iter_mut().for_each(|s| *s = T::zero());
        }
        Layer::Residual(r) => {
            let n = r.main.layers.len();
            for (i, l) in r.main.layers.iter_mut().enumerate() {
                // Damp the last convolution of each residual branch so deep
                // stacks start close to the identity.
                let g = if i + 2 >= n { 0.2 } else { 1.0 };
                init_layer(l, rng, g);
            }
            if let Some(s) = &mut r.shortcut {
                s.layers.iter_mut().for_each(|l| init_layer(l, rng, 1.0));
            }
        }
        _ => {}
    }
}

pub fn fill_normal<T: Scalar, R: Rng>(buf: &mut [T], rng: &mut R, std: f64) {
    for v in buf {
        let z: f64 = rng.sample(StandardNormal);
        *v = T::lit(z * std);
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Binary cross-entropy on a logit; returns `(loss, dloss/dlogit)`.
pub fn bce_with_logit<T: Scalar>(logit: T, target: T) -> (T, T) {
    let loss = logit.max(T::zero()) - logit * target + (T::one() + (-logit.abs()).exp()).ln();
    (loss, sigmoid(logit) - target)
}

fn max_pool<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize, pad: usize) -> (Tensor<T>, Vec<usize>) {
    let ho = (x.h + 2 * pad - k) / stride + 1;
    let wo = (x.w + 2 * pad - k) / stride + 1;
    let mut y = Tensor::zeros(x.c, ho, wo);
    let mut argmax = vec![0usize; x.c * ho * wo];
    for c in 0..x.c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = T::neg_infinity();
                let mut best_i = usize::MAX;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy as usize >= x.h {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix as usize >= x.w {
                            continue;
                        }
                        let idx = (c * x.h + iy as usize) * x.w + ix as usize;
                        if best_i == usize::MAX || x.data[idx] > best {
                            best = x.data[idx];
                            best_i = idx;
                        }
                    }
                }
                let o = (c * ho + oy) * wo + ox;
                y.data[o] = best;
                argmax[o] = best_i;
            }
        }
    }
    (y, argmax)
}

fn avg_pool<T: Scalar>(x: &Tensor<T>, k: usize) -> Tensor<T> {
    let (ho, wo) = (x.h / k, x.w / k);
    let mut y = Tensor::zeros(x.c, ho, wo);
    let inv = T::one() / T::lit((k * k) as f64);
    for c in 0..x.c {
        let src = x.plane(c);
        let dst = y.plane_mut(c);
        for iy in 0..ho * k {
            let row = &src[iy * x.w..iy * x.w + wo * k];
            let out = &mut dst[(iy / k) * wo..(iy / k + 1) * wo];
            for (ix, v) in row.iter().enumerate() {
                out[ix / k] += *v;
            }
        }
        dst.iter_mut().for_each(|v| *v *= inv);
    }
    y
}

fn avg_pool_backward<T: Scalar>(dy: &Tensor<T>, k: usize, c: usize, h: usize, w: usize) -> Tensor<T> {
    let mut dx = Tensor::zeros(c, h, w);
    let inv = T::one() / T::lit((k * k) as f64);
    for ch in 0..c {
        let g = dy.plane(ch);
        let dst = dx.plane_mut(ch);
        for iy in 0..dy.h * k {
            for ix in 0..dy.w * k {
                dst[iy * w + ix] = g[(iy / k) * dy.w + ix / k] * inv;
            }
        }
    }
    dx
}

fn upsample_nearest<T: Scalar>(x: &Tensor<T>, f: usize) -> Tensor<T> {
    let (h, w) = (x.h * f, x.w * f);
    let mut y = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        let src = x.plane(c);
        let dst = y.plane_mut(c);
        for oy in 0..h {
            let row = &src[(oy / f) * x.w..(oy / f + 1) * x.w];
            for (ox, v) in dst[oy * w..(oy + 1) * w].iter_mut().enumerate() {
                *v = row[ox / f];
            }
        }
    }
    y
}

fn upsample_nearest_backward<T: Scalar>(dy: &Tensor<T>, f: usize, c: usize, h: usize, w: usize) -> Tensor<T> {
    let mut dx = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let g = dy.plane(ch);
        let dst = dx.plane_mut(ch);
        for oy in 0..dy.h {
            for ox in 0..dy.w {
                dst[(oy / f) * w + ox / f] += g[oy * dy.w + ox];
            }
        }
    }
    dx
}

/// Taps of a half-pixel-centered linear resampler from `n_in` to `n_out`
/// samples: `(i0, i1, frac)` per output sample.
pub(crate) fn linear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn upsample_bilinear<T: Scalar>(x: &Tensor<T>, f: usize) -> Tensor<T> {
    let (h, w) = (x.h * f, x.w * f);
    let ty = linear_taps(x.h, h);
    let tx = linear_taps(x.w, w);
    let mut y = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        let src = x.plane(c);
        let dst = y.plane_mut(c);
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::lit(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::lit(fx);
                let top = src[y0 * x.w + x0] * (T::one() - fx) + src[y0 * x.w + x1] * fx;
                let bot = src[y1 * x.w + x0] * (T::one() - fx) + src[y1 * x.w + x1] * fx;
                dst[oy * w + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    y
}

fn upsample_bilinear_backward<T: Scalar>(dy: &Tensor<T>, f: usize, c: usize, h: usize, w: usize) -> Tensor<T> {
    let _ = f;
    let ty = linear_taps(h, dy.h);
    let tx = linear_taps(w, dy.w);
    let mut dx = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let g = dy.plane(ch);
        let dst = dx.plane_mut(ch);
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::lit(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::lit(fx);
                let d = g[oy * dy.w + ox];
                dst[y0 * w + x0] += d * (T::one() - fy) * (T::one() - fx);
                dst[y0 * w + x1] += d * (T::one() - fy) * fx;
                dst[y1 * w + x0] += d * fy * (T::one() - fx);
                dst[y1 * w + x1] += d * fy * fx;
            }
        }
    }
    dx
}
