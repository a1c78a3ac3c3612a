use image::RgbImage;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense channel-major (`C×H×W`) array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::ShapeMismatch {
                expected: format!("{} elements ({c}x{h}x{w})", c * h * w),
                got: data.len().to_string(),
            });
        }
        Ok(Tensor { c, h, w, data })
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.h + y) * self.w + x]
    }

    /// RGB image scaled by `1/255` into `[0, 1]`.
    pub fn from_rgb_unit(img: &RgbImage) -> Self {
        Self::from_rgb_affine(img, [T::zero(); 3], [T::one(); 3])
    }

    /// RGB image scaled to `[0, 1]`, then `(x - mean[c]) / std[c]`.
    pub fn from_rgb_affine(img: &RgbImage, mean: [T; 3], std: [T; 3]) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut t = Self::zeros(3, h, w);
        let inv = T::one() / T::lit(255.0);
        let n = h * w;
        for (i, px) in img.pixels().enumerate() {
            for c in 0..3 {
                t.data[c * n + i] = (T::lit(px[c] as f64) * inv - mean[c]) / std[c];
            }
        }
        t
    }

    /// RGB image with raw 8-bit intensities (0..=255) as floats.
    pub fn from_rgb_raw(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut t = Self::zeros(3, h, w);
        let n = h * w;
        for (i, px) in img.pixels().enumerate() {
            for c in 0..3 {
                t.data[c * n + i] = T::lit(px[c] as f64);
            }
        }
        t
    }

    /// Rounds raw intensities back to 8 bits, clamping to `0..=255`.
    pub fn to_rgb_raw(&self) -> RgbImage {
        assert_eq!(self.c, 3, "expected three channels");
        let n = self.h * self.w;
        let mut img = RgbImage::new(self.w as u32, self.h as u32);
        for (i, px) in img.pixels_mut().enumerate() {
            for c in 0..3 {
                px[c] = quantize_u8(self.data[c * n + i].as_f64());
            }
        }
        img
    }

    /// Inverse of [`Tensor::from_rgb_unit`].
    pub fn to_rgb_unit(&self) -> RgbImage {
        let mut scaled = self.clone();
        let k = T::lit(255.0);
        scaled.data.iter_mut().for_each(|v| *v *= k);
        scaled.to_rgb_raw()
    }
}

/// Round-half-away-from-zero, then clamp to the 8-bit range.
#[inline]
pub fn quantize_u8(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.round().clamp(0.0, 255.0) as u8
}
