use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Zero,
    Reflect,
}

/// Mirror index into `0..n` without repeating the edge sample
/// (`d c b | a b c d | c b a`).
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// 2-D convolution over a `C×H×W` tensor, lowered to a matrix product.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub padding: Padding,
    /// `out_c × (in_c·k·k)`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, padding: Padding) -> Self {
        Conv2d {
            in_c,
            out_c,
            k,
            stride,
            pad,
            padding,
            weight: vec![T::zero(); out_c * in_c * k * k],
            bias: vec![T::zero(); out_c],
        }
    }

    #[inline]
    fn patch_len(&self) -> usize {
        self.in_c * self.k * self.k
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let ho = (h + 2 * self.pad - self.k) / self.stride + 1;
        let wo = (w + 2 * self.pad - self.k) / self.stride + 1;
        (ho, wo)
    }

    /// Maps an output coordinate and kernel tap to an input coordinate.
    #[inline]
    fn source(&self, o: usize, tap: usize, n: usize) -> Option<usize> {
        let i = (o * self.stride + tap) as isize - self.pad as isize;
        if i >= 0 && (i as usize) < n {
            Some(i as usize)
        } else {
            match self.padding {
                Padding::Zero => None,
                Padding::Reflect => Some(reflect_index(i, n)),
            }
        }
    }

    fn tap_table(&self, out: usize, n: usize) -> Vec<Vec<Option<usize>>> {
        (0..self.k)
            .map(|tap| (0..out).map(|o| self.source(o, tap, n)).collect())
            .collect()
    }

    fn im2col(&self, x: &Tensor<T>, ho: usize, wo: usize) -> Vec<T> {
        let n = ho * wo;
        let mut cols = vec![T::zero(); self.patch_len() * n];
        let ys = self.tap_table(ho, x.h);
        let xs = self.tap_table(wo, x.w);
        for ci in 0..self.in_c {
            let plane = x.plane(ci);
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..ho {
                        let Some(iy) = ys[ky][oy] else { continue };
                        let src = &plane[iy * x.w..(iy + 1) * x.w];
                        let out = &mut dst[oy * wo..(oy + 1) * wo];
                        for (ox, slot) in out.iter_mut().enumerate() {
                            if let Some(ix) = xs[kx][ox] {
                                *slot = src[ix];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], c: usize, h: usize, w: usize, ho: usize, wo: usize) -> Tensor<T> {
        let n = ho * wo;
        let mut dx = Tensor::zeros(c, h, w);
        let ys = self.tap_table(ho, h);
        let xs = self.tap_table(wo, w);
        for ci in 0..self.in_c {
            let plane = dx.plane_mut(ci);
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..ho {
                        let Some(iy) = ys[ky][oy] else { continue };
                        let dst = &mut plane[iy * w..(iy + 1) * w];
                        for ox in 0..wo {
                            if let Some(ix) = xs[kx][ox] {
                                dst[ix] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    /// Returns the output and the lowered input columns (needed by
    /// [`Conv2d::backward`]).
    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
        assert_eq!(x.c, self.in_c, "conv input channels");
        let (ho, wo) = self.out_dims(x.h, x.w);
        let n = ho * wo;
        let cols = self.im2col(x, ho, wo);
        let mut out = vec![T::zero(); self.out_c * n];
        {
            let wv = ArrayView2::from_shape((self.out_c, self.patch_len()), &self.weight).unwrap();
            let cv = ArrayView2::from_shape((self.patch_len(), n), &cols).unwrap();
            let mut ov = ArrayViewMut2::from_shape((self.out_c, n), &mut out).unwrap();
            general_mat_mul(T::one(), &wv, &cv, T::zero(), &mut ov);
        }
        for (o, b) in self.bias.iter().enumerate() {
            out[o * n..(o + 1) * n].iter_mut().for_each(|v| *v += *b);
        }
        (Tensor { c: self.out_c, h: ho, w: wo, data: out }, cols)
    }

    /// Accumulates weight and bias gradients; returns the input gradient when
    /// `need_dx` is set.
    pub fn backward(
        &self,
        cols: &[T],
        in_shape: (usize, usize, usize),
        dy: &Tensor<T>,
        grad_w: &mut [T],
        grad_b: &mut [T],
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let n = dy.h * dy.w;
        let dyv = ArrayView2::from_shape((self.out_c, n), &dy.data).unwrap();
        let cv = ArrayView2::from_shape((self.patch_len(), n), cols).unwrap();
        {
            let mut gw = ArrayViewMut2::from_shape((self.out_c, self.patch_len()), grad_w).unwrap();
            general_mat_mul(T::one(), &dyv, &cv.t(), T::one(), &mut gw);
        }
        for (o, gb) in grad_b.iter_mut().enumerate() {
            *gb += dy.data[o * n..(o + 1) * n].iter().copied().sum::<T>();
        }
        if !need_dx {
            return None;
        }
        let wv = ArrayView2::from_shape((self.out_c, self.patch_len()), &self.weight).unwrap();
        let mut dcols = vec![T::zero(); self.patch_len() * n];
        {
            let mut dv = ArrayViewMut2::from_shape((self.patch_len(), n), &mut dcols).unwrap();
            general_mat_mul(T::one(), &wv.t(), &dyv, T::zero(), &mut dv);
        }
        let (c, h, w) = in_shape;
        Some(self.col2im(&dcols, c, h, w, dy.h, dy.w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as the reference.
    fn naive(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (ho, wo) = conv.out_dims(x.h, x.w);
        let mut out = Tensor::zeros(conv.out_c, ho, wo);
        for o in 0..conv.out_c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = conv.bias[o];
                    for ci in 0..conv.in_c {
                        for ky in 0..conv.k {
                            for kx in 0..conv.k {
                                let (Some(iy), Some(ix)) = (conv.source(oy, ky, x.h), conv.source(ox, kx, x.w)) else {
                                    continue;
                                };
                                acc += conv.weight[((o * conv.in_c + ci) * conv.k + ky) * conv.k + kx] * x.at(ci, iy, ix);
                            }
                        }
                    }
                    out.data[(o * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    fn sample_conv(padding: Padding, stride: usize) -> (Conv2d<f64>, Tensor<f64>) {
        let mut conv = Conv2d::zeros(2, 3, 3, stride, 1, padding);
        for (i, w) in conv.weight.iter_mut().enumerate() {
            *w = ((i * 37 % 11) as f64 - 5.0) / 7.0;
        }
        conv.bias = vec![0.1, -0.2, 0.3];
        let data = (0..2 * 5 * 6).map(|i| ((i * 13 % 17) as f64) / 17.0).collect();
        (conv, Tensor::from_vec(2, 5, 6, data).unwrap())
    }

    #[test]
    fn reflect_index_mirrors_without_edge_repeat() {
        let got: Vec<usize> = (-3..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn lowered_convolution_matches_direct_loops() {
        for padding in [Padding::Zero, Padding::Reflect] {
            for stride in [1, 2] {
                let (conv, x) = sample_conv(padding, stride);
                let (fast, _) = conv.forward(&x);
                let slow = naive(&conv, &x);
                assert_eq!(fast.shape(), slow.shape());
                for (a, b) in fast.data.iter().zip(&slow.data) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for padding in [Padding::Zero, Padding::Reflect] {
            let (conv, x) = sample_conv(padding, 2);
            // Loss = sum(out * r) for a fixed r.
            let (out, cols) = conv.forward(&x);
            let r: Vec<f64> = (0..out.data.len()).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
            let dy = Tensor::from_vec(out.c, out.h, out.w, r.clone()).unwrap();
            let mut gw = vec![0.0; conv.weight.len()];
            let mut gb = vec![0.0; conv.bias.len()];
            let dx = conv.backward(&cols, x.shape(), &dy, &mut gw, &mut gb, true).unwrap();
            let loss = |c: &Conv2d<f64>, x: &Tensor<f64>| -> f64 {
                c.forward(x).0.data.iter().zip(&r).map(|(a, b)| a * b).sum()
            };
            let eps = 1e-6;
            for i in [0, 5, 17, 40] {
                let mut p = conv.clone();
                p.weight[i] += eps;
                let mut m = conv.clone();
                m.weight[i] -= eps;
                let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * eps);
                assert!((fd - gw[i]).abs() < 1e-6, "weight {i}: {fd} vs {}", gw[i]);
            }
            for i in [0, 7, 33, 59] {
                let mut xp = x.clone();
                xp.data[i] += eps;
                let mut xm = x.clone();
                xm.data[i] -= eps;
                let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * eps);
                assert!((fd - dx.data[i]).abs() < 1e-6, "input {i}: {fd} vs {}", dx.data[i]);
            }
            let fd_b: f64 = r[..out.h * out.w].iter().sum();
            assert!((gb[0] - fd_b).abs() < 1e-9);
        }
    }
}
