//! Training-time post-processing simulation: flip, Gaussian blur and JPEG
//! re-encoding, followed by a random crop.

mod blur;
mod jpeg;

pub use blur::{blur_plane, gaussian_blur, gaussian_kernel_1d, kernel_radius};
pub use jpeg::{jpeg_encode, jpeg_reencode, ChromaSubsampling, JpegCodecConfig, QuantFlavor};

use image::imageops::flip_horizontal;
use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{crop, CropMode};
use crate::error::{Error, Result};

pub const PRESET_NAMES: [&str; 5] = ["no_aug", "blur_only", "jpeg_only", "blur_jpeg_05", "blur_jpeg_01"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub flip_prob: f64,
    pub blur_prob: f64,
    pub sigma_range: (f64, f64),
    pub jpeg_prob: f64,
    pub quality_range: (u8, u8),
    pub encoder_variants: Vec<JpegCodecConfig>,
    pub crop_size: u32,
}

impl AugmentationPolicy {
    fn with_probs(blur_prob: f64, jpeg_prob: f64) -> Self {
        AugmentationPolicy {
            flip_prob: 0.5,
            blur_prob,
            sigma_range: (0.0, 3.0),
            jpeg_prob,
            quality_range: (30, 100),
            encoder_variants: JpegCodecConfig::defaults(),
            crop_size: 224,
        }
    }

    /// Named presets: `no_aug`, `blur_only`, `jpeg_only`, `blur_jpeg_05`, `blur_jpeg_01`.
    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "no_aug" => Self::with_probs(0.0, 0.0),
            "blur_only" => Self::with_probs(0.5, 0.0),
            "jpeg_only" => Self::with_probs(0.0, 0.5),
            "blur_jpeg_05" => Self::with_probs(0.5, 0.5),
            "blur_jpeg_01" => Self::with_probs(0.1, 0.1),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown augmentation preset `{other}` (expected one of {})",
                    PRESET_NAMES.join(", ")
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [("flip_prob", self.flip_prob), ("blur_prob", self.blur_prob), ("jpeg_prob", self.jpeg_prob)];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation(format!("{name} = {p} is not a probability")));
            }
        }
        let (lo, hi) = self.sigma_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Validation(format!("bad sigma range [{lo}, {hi}]")));
        }
        let (qlo, qhi) = self.quality_range;
        if qlo < 1 || qhi > 100 || qlo > qhi {
            return Err(Error::Validation(format!("bad quality range {{{qlo}..{qhi}}}")));
        }
        if self.encoder_variants.is_empty() {
            return Err(Error::Validation("no JPEG encoder variants".into()));
        }
        for (i, a) in self.encoder_variants.iter().enumerate() {
            if self.encoder_variants[..i].iter().any(|b| b.variant_id == a.variant_id) {
                return Err(Error::Validation(format!("duplicate encoder variant `{}`", a.variant_id)));
            }
        }
        if self.crop_size == 0 {
            return Err(Error::Validation("crop size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JpegOp {
    pub quality: u8,
    pub codec: JpegCodecConfig,
}

/// Which operations fired in one draw, with their parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedOps {
    pub flipped: bool,
    pub blur_sigma: Option<f64>,
    pub jpeg: Option<JpegOp>,
    pub crop_offset: (u32, u32),
}

/// Samples and applies flip → blur → JPEG → random crop.
pub fn augment_train<R: Rng + ?Sized>(img: &RgbImage, policy: &AugmentationPolicy, rng: &mut R) -> Result<(RgbImage, AppliedOps)> {
    let flipped = rng.random_bool(policy.flip_prob);
    let blur_sigma = rng
        .random_bool(policy.blur_prob)
        .then(|| rng.random_range(policy.sigma_range.0..=policy.sigma_range.1));
    let jpeg = if rng.random_bool(policy.jpeg_prob) {
        let quality = rng.random_range(policy.quality_range.0..=policy.quality_range.1);
        let codec = policy.encoder_variants[rng.random_range(0..policy.encoder_variants.len())].clone();
        Some(JpegOp { quality, codec })
    } else {
        None
    };
    let processed = apply_ops(img, flipped, blur_sigma, jpeg.as_ref())?;
    let (out, crop_offset) = crop(&processed, policy.crop_size, CropMode::Random, rng)?;
    Ok((out, AppliedOps { flipped, blur_sigma, jpeg, crop_offset }))
}

/// Re-applies a recorded draw; reproduces the output of [`augment_train`].
pub fn replay_ops(img: &RgbImage, ops: &AppliedOps, crop_size: u32) -> Result<RgbImage> {
    let processed = apply_ops(img, ops.flipped, ops.blur_sigma, ops.jpeg.as_ref())?;
    let (x, y) = ops.crop_offset;
    if x + crop_size > processed.width() || y + crop_size > processed.height() {
        return Err(Error::ImageTooSmall { width: processed.width(), height: processed.height(), size: crop_size });
    }
    Ok(image::imageops::crop_imm(&processed, x, y, crop_size, crop_size).to_image())
}

fn apply_ops(img: &RgbImage, flipped: bool, sigma: Option<f64>, jpeg: Option<&JpegOp>) -> Result<RgbImage> {
    let mut out = if flipped { flip_horizontal(img) } else { img.clone() };
    if let Some(s) = sigma {
        out = gaussian_blur(&out, s);
    }
    if let Some(j) = jpeg {
        out = jpeg_reencode(&out, j.quality, &j.codec)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn textured(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| image::Rgb([(x * 5 % 256) as u8, (y * 9 % 256) as u8, ((x * y) % 256) as u8]))
    }

    #[test]
    fn presets_validate() {
        for name in PRESET_NAMES {
            AugmentationPolicy::preset(name).unwrap().validate().unwrap();
        }
        assert!(AugmentationPolicy::preset("resize").is_err());
    }

    #[test]
    fn validation_catches_bad_fields() {
        let mut p = AugmentationPolicy::preset("no_aug").unwrap();
        p.blur_prob = 1.5;
        assert!(p.validate().is_err());
        let mut p = AugmentationPolicy::preset("no_aug").unwrap();
        p.quality_range = (0, 100);
        assert!(p.validate().is_err());
        let mut p = AugmentationPolicy::preset("no_aug").unwrap();
        p.encoder_variants.push(JpegCodecConfig::annexk_420());
        assert!(p.validate().is_err());
    }

    #[test]
    fn no_aug_only_flips_and_crops() {
        let img = textured(240, 230);
        let policy = AugmentationPolicy::preset("no_aug").unwrap();
        let mut r = rng::stream(4);
        for _ in 0..20 {
            let (out, ops) = augment_train(&img, &policy, &mut r).unwrap();
            assert!(ops.blur_sigma.is_none() && ops.jpeg.is_none());
            let src = if ops.flipped { flip_horizontal(&img) } else { img.clone() };
            let (x, y) = ops.crop_offset;
            assert_eq!(out, image::imageops::crop_imm(&src, x, y, 224, 224).to_image());
        }
    }

    #[test]
    fn recorded_ops_reproduce_output() {
        let img = textured(230, 228);
        let policy = AugmentationPolicy::preset("blur_jpeg_05").unwrap();
        let mut r = rng::stream(9);
        for _ in 0..12 {
            let (out, ops) = augment_train(&img, &policy, &mut r).unwrap();
            assert_eq!(replay_ops(&img, &ops, 224).unwrap(), out);
        }
        let (a, _) = augment_train(&img, &policy, &mut rng::stream(3)).unwrap();
        let (b, _) = augment_train(&img, &policy, &mut rng::stream(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn undersized_input_is_an_error() {
        let policy = AugmentationPolicy::preset("no_aug").unwrap();
        assert!(augment_train(&textured(200, 300), &policy, &mut rng::stream(0)).is_err());
    }
}
