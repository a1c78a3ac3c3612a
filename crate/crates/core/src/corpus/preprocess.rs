use std::path::Path;

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::linear_taps;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessMode {
    Keep,
    ResizeShortSide,
    CropLongThenResize,
}

/// How a source's images are brought to the canonical resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessRule {
    pub mode: PreprocessMode,
    #[serde(default = "default_target")]
    pub target: u32,
}

fn default_target() -> u32 {
    256
}

impl PreprocessRule {
    pub fn keep() -> Self {
        PreprocessRule { mode: PreprocessMode::Keep, target: default_target() }
    }

    pub fn resize_short_side(target: u32) -> Self {
        PreprocessRule { mode: PreprocessMode::ResizeShortSide, target }
    }

    pub fn crop_long_then_resize(target: u32) -> Self {
        PreprocessRule { mode: PreprocessMode::CropLongThenResize, target }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode != PreprocessMode::Keep && self.target == 0 {
            return Err(Error::InvalidArgument("preprocess target must be positive".into()));
        }
        Ok(())
    }

    /// Parses `keep`, `resize_short_side:256` or `crop_long_then_resize:256`.
    pub fn parse(s: &str) -> Result<Self> {
        let (mode, target) = match s.split_once(':') {
            Some((m, t)) => (
                m,
                t.parse::<u32>()
                    .map_err(|_| Error::InvalidArgument(format!("bad preprocess target in `{s}`")))?,
            ),
            None => (s, default_target()),
        };
        let mode = match mode {
            "keep" => PreprocessMode::Keep,
            "resize_short_side" => PreprocessMode::ResizeShortSide,
            "crop_long_then_resize" => PreprocessMode::CropLongThenResize,
            other => return Err(Error::InvalidArgument(format!("unknown preprocess mode `{other}`"))),
        };
        let rule = PreprocessRule { mode, target };
        rule.validate()?;
        Ok(rule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropMode {
    Random,
    Center,
}

/// Decodes any supported image file to 8-bit RGB.
pub fn load_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::ImageDecode { path: path.to_path_buf(), msg: other.to_string() },
    })?;
    Ok(img.to_rgb8())
}

/// Bilinear resampling with half-pixel-centered sample positions and edge
/// clamping. Each output channel value is rounded once to 8 bits.
pub fn resize_bilinear(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    if img.width() == width && img.height() == height {
        return img.clone();
    }
    let (w_in, h_in) = (img.width() as usize, img.height() as usize);
    let tx = linear_taps(w_in, width as usize);
    let ty = linear_taps(h_in, height as usize);
    // Horizontal pass into f64, then vertical pass.
    let mut tmp = vec![0.0f64; h_in * width as usize * 3];
    let src = img.as_raw();
    for y in 0..h_in {
        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
            for c in 0..3 {
                let a = src[(y * w_in + x0) * 3 + c] as f64;
                let b = src[(y * w_in + x1) * 3 + c] as f64;
                tmp[(y * width as usize + ox) * 3 + c] = a * (1.0 - fx) + b * fx;
            }
        }
    }
    let mut out = RgbImage::new(width, height);
    let w = width as usize;
    let dst: &mut [u8] = &mut out;
    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
        for ox in 0..w {
            for c in 0..3 {
                let a = tmp[(y0 * w + ox) * 3 + c];
                let b = tmp[(y1 * w + ox) * 3 + c];
                dst[(oy * w + ox) * 3 + c] = crate::tensor::quantize_u8(a * (1.0 - fy) + b * fy);
            }
        }
    }
    out
}

/// Scales so the shorter side equals `target`, preserving aspect ratio.
pub fn resize_short_side(img: &RgbImage, target: u32) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let (nw, nh) = if w <= h {
        (target, ((h as f64 * target as f64 / w as f64).round() as u32).max(1))
    } else {
        (((w as f64 * target as f64 / h as f64).round() as u32).max(1), target)
    };
    resize_bilinear(img, nw, nh)
}

pub fn preprocess_image(img: &RgbImage, rule: PreprocessRule) -> RgbImage {
    match rule.mode {
        PreprocessMode::Keep => img.clone(),
        PreprocessMode::ResizeShortSide => resize_short_side(img, rule.target),
        PreprocessMode::CropLongThenResize => {
            let side = img.width().min(img.height());
            let square = crop_at(img, side, (img.width() - side) / 2, (img.height() - side) / 2);
            resize_bilinear(&square, rule.target, rule.target)
        }
    }
}

fn crop_at(img: &RgbImage, size: u32, x: u32, y: u32) -> RgbImage {
    image::imageops::crop_imm(img, x, y, size, size).to_image()
}

fn check_crop(img: &RgbImage, size: u32) -> Result<()> {
    if img.width() < size || img.height() < size {
        return Err(Error::ImageTooSmall { width: img.width(), height: img.height(), size });
    }
    Ok(())
}

/// Square crop; returns the crop and its top-left offset `(x, y)`.
///
/// Center mode uses floor-centered offsets. Random mode draws both offsets
/// uniformly from the valid range. Undersized images are an error.
pub fn crop<R: Rng + ?Sized>(img: &RgbImage, size: u32, mode: CropMode, rng: &mut R) -> Result<(RgbImage, (u32, u32))> {
    check_crop(img, size)?;
    let (sx, sy) = (img.width() - size, img.height() - size);
    let (x, y) = match mode {
        CropMode::Center => (sx / 2, sy / 2),
        CropMode::Random => (rng.random_range(0..=sx), rng.random_range(0..=sy)),
    };
    Ok((crop_at(img, size, x, y), (x, y)))
}

pub fn center_crop(img: &RgbImage, size: u32) -> Result<RgbImage> {
    check_crop(img, size)?;
    Ok(crop_at(img, size, (img.width() - size) / 2, (img.height() - size) / 2))
}
