//! Averaged high-pass spectra: the frequency-domain fingerprint of
//! upsampling-based generators.

use std::fs;
use std::path::Path;

use image::{GrayImage, RgbImage};
use rand::seq::index::sample;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::reflect_index;
use crate::rng::{derived_stream, sha256_hex};
use crate::scalar::Scalar;
use crate::tensor::{quantize_u8, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    MeanOfChannels,
}

/// DC-centered magnitude spectrum averaged over images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMap<T> {
    pub h: usize,
    pub w: usize,
    /// Row-major `h × w`; DC sits at `(h/2, w/2)`.
    pub magnitudes: Vec<T>,
    pub n_averaged: usize,
    pub source_id: String,
    pub channel_mode: ChannelMode,
}

/// `median3×3(image) − image` per channel, with reflect borders.
pub fn high_pass<T: Scalar>(img: &RgbImage) -> Tensor<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let mut out = Tensor::zeros(3, h, w);
    let mut win = [0u8; 9];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut k = 0;
                for dy in -1isize..=1 {
                    let yy = reflect_index(y as isize + dy, h);
                    for dx in -1isize..=1 {
                        let xx = reflect_index(x as isize + dx, w);
                        win[k] = raw[(yy * w + xx) * 3 + c];
                        k += 1;
                    }
                }
                win.sort_unstable();
                out.data[(c * h + y) * w + x] = T::lit(win[4] as f64 - raw[(y * w + x) * 3 + c] as f64);
            }
        }
    }
    out
}

/// Uncentered magnitude of the 2-D DFT of each residual channel, averaged
/// over channels.
pub fn residual_spectrum<T: Scalar>(img: &RgbImage, planner: &mut FftPlanner<T>) -> Vec<T> {
    let res: Tensor<T> = high_pass(img);
    let (h, w) = (res.h, res.w);
    let row_fft = planner.plan_fft_forward(w);
    let col_fft = planner.plan_fft_forward(h);
    let mut acc = vec![T::zero(); h * w];
    let mut buf = vec![Complex::new(T::zero(), T::zero()); h * w];
    let mut col = vec![Complex::new(T::zero(), T::zero()); h];
    let third = T::lit(1.0 / 3.0);
    for c in 0..3 {
        for (b, &v) in buf.iter_mut().zip(res.plane(c)) {
            *b = Complex::new(v, T::zero());
        }
        for row in buf.chunks_mut(w) {
            row_fft.process(row);
        }
        for x in 0..w {
            for y in 0..h {
                col[y] = buf[y * w + x];
            }
            col_fft.process(&mut col);
            for y in 0..h {
                buf[y * w + x] = col[y];
            }
        }
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm() * third;
        }
    }
    acc
}

/// Averages residual spectra over up to `n_max` images chosen uniformly
/// without replacement. `load(i)` yields image `i` of `count`.
///
/// Images are keyed by a content hash; the seeded subset is drawn over the
/// hash-sorted list and summed in hash order, so the result does not depend
/// on the order in which images are supplied.
pub fn average_spectrum_from<T: Scalar, F>(count: usize, mut load: F, n_max: usize, seed: u64, source_id: &str) -> Result<SpectrumMap<T>>
where
    F: FnMut(usize) -> Result<RgbImage>,
{
    if count == 0 || n_max == 0 {
        return Err(Error::InvalidArgument("average_spectrum needs at least one image".into()));
    }
    let mut dims = None;
    let mut keyed = Vec::with_capacity(count);
    for i in 0..count {
        let img = load(i)?;
        let d = img.dimensions();
        match dims {
            None => dims = Some(d),
            Some(first) if first != d => {
                return Err(Error::ShapeMismatch {
                    expected: format!("{}x{}", first.0, first.1),
                    got: format!("{}x{} (image {i})", d.0, d.1),
                })
            }
            _ => {}
        }
        keyed.push((sha256_hex(img.as_raw()), i));
    }
    keyed.sort();
    let mut chosen: Vec<usize> = if count <= n_max {
        (0..count).collect()
    } else {
        sample(&mut derived_stream(seed, &["spectrum", source_id]), count, n_max).into_vec()
    };
    chosen.sort_unstable();
    let (w, h) = dims.expect("at least one image");
    let (w, h) = (w as usize, h as usize);
    let mut planner = FftPlanner::new();
    let mut sum = vec![T::zero(); w * h];
    for &k in &chosen {
        let spec = residual_spectrum::<T>(&load(keyed[k].1)?, &mut planner);
        sum.iter_mut().zip(&spec).for_each(|(s, v)| *s += *v);
    }
    let n = T::lit(chosen.len() as f64);
    let mut magnitudes = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            magnitudes[((y + h / 2) % h) * w + (x + w / 2) % w] = sum[y * w + x] / n;
        }
    }
    Ok(SpectrumMap { h, w, magnitudes, n_averaged: chosen.len(), source_id: source_id.to_string(), channel_mode: ChannelMode::MeanOfChannels })
}

pub fn average_spectrum<T: Scalar>(images: &[RgbImage], n_max: usize, seed: u64, source_id: &str) -> Result<SpectrumMap<T>> {
    average_spectrum_from(images.len(), |i| Ok(images[i].clone()), n_max, seed, source_id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
struct Sidecar {
    h: usize,
    w: usize,
    #[serde(rename = "n_averaged")]
    n_averaged: usize,
    #[serde(rename = "source_id")]
    source_id: String,
}

impl<T: Scalar> SpectrumMap<T> {
    pub fn at(&self, y: usize, x: usize) -> T {
        self.magnitudes[y * self.w + x]
    }

    /// Largest relative gap between an entry and its mirror through DC.
    pub fn symmetry_error(&self) -> f64 {
        let max = self.magnitudes.iter().fold(0.0f64, |m, v| m.max(v.as_f64()));
        let floor = (max * 1e-12).max(f64::MIN_POSITIVE);
        let (h, w) = (self.h, self.w);
        let mut worst = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                // Entries on an even-length edge row/column have no mirror inside the map.
                if (h % 2 == 0 && y == 0) || (w % 2 == 0 && x == 0) {
                    continue;
                }
                let a = self.at(y, x).as_f64();
                let b = self.at((h - y) % h, (w - x) % w).as_f64();
                worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(floor));
            }
        }
        worst
    }

    pub fn median(&self) -> f64 {
        let mut v: Vec<f64> = self.magnitudes.iter().map(|m| m.as_f64()).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        }
    }

    /// Peak magnitude on the rows and columns a quarter of the band away
    /// from DC, divided by the map median.
    pub fn half_band_peak_ratio(&self) -> f64 {
        let (cy, cx) = (self.h / 2, self.w / 2);
        let (qy, qx) = (self.h / 4, self.w / 4);
        let mut peak = 0.0f64;
        for y in 0..self.h {
            for x in 0..self.w {
                let on_line = y == cy - qy || y == cy + qy || x == cx - qx || x == cx + qx;
                if on_line {
                    peak = peak.max(self.at(y, x).as_f64());
                }
            }
        }
        peak / self.median()
    }

    /// `log(1 + magnitude)` min-max normalized to 8 bits; a constant map
    /// renders black.
    pub fn render(&self) -> GrayImage {
        let logs: Vec<f64> = self.magnitudes.iter().map(|m| m.as_f64().ln_1p()).collect();
        let (lo, hi) = logs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let span = hi - lo;
        let px = logs.iter().map(|&v| if span > 0.0 { quantize_u8(255.0 * (v - lo) / span) } else { 0 }).collect();
        GrayImage::from_raw(self.w as u32, self.h as u32, px).expect("map dimensions")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        self.render()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::ImageEncode(format!("{}: {e}", path.display())))
    }

    /// Writes the map as little-endian `f64` values, row-major, plus a JSON
    /// sidecar `{H, W, n_averaged, source_id}` next to it.
    pub fn save_raw(&self, bin_path: &Path, sidecar_path: &Path) -> Result<()> {
        ensure_parent(bin_path)?;
        let bytes: Vec<u8> = self.magnitudes.iter().flat_map(|m| m.as_f64().to_le_bytes()).collect();
        fs::write(bin_path, bytes).map_err(|e| Error::io(bin_path, e))?;
        let side = Sidecar { h: self.h, w: self.w, n_averaged: self.n_averaged, source_id: self.source_id.clone() };
        fs::write(sidecar_path, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(sidecar_path, e))
    }

    pub fn load_raw(bin_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let side: Sidecar =
            serde_json::from_str(&fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?)?;
        let bytes = fs::read(bin_path).map_err(|e| Error::io(bin_path, e))?;
        if bytes.len() != side.h * side.w * 8 {
            return Err(Error::ShapeMismatch { expected: format!("{} bytes", side.h * side.w * 8), got: format!("{} bytes", bytes.len()) });
        }
        let magnitudes = bytes.chunks_exact(8).map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes")))).collect();
        Ok(SpectrumMap { h: side.h, w: side.w, magnitudes, n_averaged: side.n_averaged, source_id: side.source_id, channel_mode: ChannelMode::MeanOfChannels })
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}
