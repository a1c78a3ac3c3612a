use image::RgbImage;

use crate::nn::reflect_index;
use crate::tensor::quantize_u8;

/// Truncation radius `⌈3σ⌉`.
pub fn kernel_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Normalized 1-D Gaussian taps `w[-r..=r]`, stored from `-r` upward.
pub fn gaussian_kernel_1d(sigma: f64) -> Vec<f64> {
    let r = kernel_radius(sigma) as isize;
    let mut w: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Blurs one `h×w` plane in place with the separable kernel. Symmetric taps
/// are summed in pairs, so mirroring the input mirrors the output bit for bit.
pub fn blur_plane(plane: &mut [f64], w: usize, h: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let k = gaussian_kernel_1d(sigma);
    let r = kernel_radius(sigma);
    let mut padded = vec![0.0; w + 2 * r];
    for y in 0..h {
        let row = &mut plane[y * w..(y + 1) * w];
        for (i, p) in padded.iter_mut().enumerate() {
            *p = row[reflect_index(i as isize - r as isize, w)];
        }
        for (x, out) in row.iter_mut().enumerate() {
            let c = x + r;
            let mut acc = k[r] * padded[c];
            for d in 1..=r {
                acc += k[r + d] * (padded[c - d] + padded[c + d]);
            }
            *out = acc;
        }
    }
    let src = plane.to_vec();
    for y in 0..h {
        let out = &mut plane[y * w..(y + 1) * w];
        let center = &src[y * w..(y + 1) * w];
        out.iter_mut().zip(center).for_each(|(o, &v)| *o = k[r] * v);
        for d in 1..=r {
            let up = reflect_index(y as isize - d as isize, h) * w;
            let down = reflect_index(y as isize + d as isize, h) * w;
            let kd = k[r + d];
            for (x, o) in out.iter_mut().enumerate() {
                *o += kd * (src[up + x] + src[down + x]);
            }
        }
    }
}

/// Per-channel Gaussian blur with reflect-padded borders. Works in floating
/// point and rounds to 8 bits once; `sigma = 0` returns the input unchanged.
pub fn gaussian_blur(img: &RgbImage, sigma: f64) -> RgbImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let mut out = raw.clone();
    let mut plane = vec![0.0; w * h];
    for c in 0..3 {
        for (i, v) in plane.iter_mut().enumerate() {
            *v = raw[i * 3 + c] as f64;
        }
        blur_plane(&mut plane, w, h, sigma);
        for (i, v) in plane.iter().enumerate() {
            out[i * 3 + c] = quantize_u8(*v);
        }
    }
    RgbImage::from_raw(img.width(), img.height(), out).expect("buffer size is unchanged")
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::imageops::flip_horizontal;
    use proptest::prelude::*;

    fn noise(w: u32, h: u32, seed: u64) -> RgbImage {
        use rand::Rng;
        let mut r = crate::rng::stream(seed);
        RgbImage::from_fn(w, h, |_, _| image::Rgb([r.random(), r.random(), r.random()]))
    }

    #[test]
    fn zero_sigma_is_identity() {
        let img = noise(17, 11, 0);
        assert_eq!(gaussian_blur(&img, 0.0), img);
    }

    #[test]
    fn constant_image_is_preserved() {
        let img = RgbImage::from_pixel(30, 20, image::Rgb([13, 128, 250]));
        assert_eq!(gaussian_blur(&img, 2.0), img);
    }

    #[test]
    fn impulse_response_matches_direct_2d_kernel() {
        let sigma = 1.0;
        let mut plane = vec![0.0; 81];
        plane[4 * 9 + 4] = 1.0;
        blur_plane(&mut plane, 9, 9, sigma);
        // Oracle: sample the 2-D density over the truncated square and normalize.
        let r = 3i32;
        let mut dens = vec![0.0; 49];
        for dy in -r..=r {
            for dx in -r..=r {
                dens[((dy + r) * 7 + dx + r) as usize] = (-((dx * dx + dy * dy) as f64) / 2.0).exp();
            }
        }
        let total: f64 = dens.iter().sum();
        for y in 0..9i32 {
            for x in 0..9i32 {
                let (dx, dy) = (x - 4, y - 4);
                let expected = if dx.abs() <= r && dy.abs() <= r { dens[((dy + r) * 7 + dx + r) as usize] / total } else { 0.0 };
                let got = plane[(y * 9 + x) as usize];
                assert!((got - expected).abs() < 1e-12, "({x},{y}) {got} vs {expected}");
            }
        }
    }

    #[test]
    fn kernel_sums_to_one() {
        for i in 1..=500 {
            let sigma = i as f64 * 0.01;
            let k = gaussian_kernel_1d(sigma);
            let s1: f64 = k.iter().sum();
            let s2: f64 = k.iter().flat_map(|a| k.iter().map(move |b| a * b)).sum();
            assert!((s1 - 1.0).abs() < 1e-6 && (s2 - 1.0).abs() < 1e-6, "sigma {sigma}");
            assert_eq!(k.len(), 2 * kernel_radius(sigma) + 1);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn blur_commutes_with_horizontal_flip(seed in any::<u64>(), sigma in 0.0f64..3.0, w in 1u32..24, h in 1u32..24) {
            let img = noise(w, h, seed);
            prop_assert_eq!(gaussian_blur(&flip_horizontal(&img), sigma), flip_horizontal(&gaussian_blur(&img, sigma)));
        }
    }
}
