use image::RgbImage;
use jpeg_encoder::{ColorType, Encoder, QuantizationTableType, SamplingFactor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChromaSubsampling {
    #[serde(rename = "4:2:0")]
    S420,
    #[serde(rename = "4:4:4")]
    S444,
}

/// Quantization-table family used by the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantFlavor {
    AnnexK,
    Imagemagick,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JpegCodecConfig {
    pub variant_id: String,
    pub chroma_subsampling: ChromaSubsampling,
    pub quantization_flavor: QuantFlavor,
}

impl JpegCodecConfig {
    /// Baseline tables with 4:2:0 chroma, the common library default.
    pub fn annexk_420() -> Self {
        JpegCodecConfig {
            variant_id: "annexk_420".into(),
            chroma_subsampling: ChromaSubsampling::S420,
            quantization_flavor: QuantFlavor::AnnexK,
        }
    }

    /// Alternate tables with full-resolution chroma.
    pub fn imagemagick_444() -> Self {
        JpegCodecConfig {
            variant_id: "imagemagick_444".into(),
            chroma_subsampling: ChromaSubsampling::S444,
            quantization_flavor: QuantFlavor::Imagemagick,
        }
    }

    pub fn defaults() -> Vec<Self> {
        vec![Self::annexk_420(), Self::imagemagick_444()]
    }
}

pub fn jpeg_encode(img: &RgbImage, quality: u8, codec: &JpegCodecConfig) -> Result<Vec<u8>> {
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidArgument(format!("JPEG quality {quality} outside 1..=100")));
    }
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 || w > u16::MAX as u32 || h > u16::MAX as u32 {
        return Err(Error::InvalidArgument(format!("cannot JPEG-encode a {w}x{h} image")));
    }
    let mut buf = Vec::new();
    let mut enc = Encoder::new(&mut buf, quality);
    enc.set_sampling_factor(match codec.chroma_subsampling {
        ChromaSubsampling::S420 => SamplingFactor::R_4_2_0,
        ChromaSubsampling::S444 => SamplingFactor::R_4_4_4,
    });
    let table = match codec.quantization_flavor {
        QuantFlavor::AnnexK => QuantizationTableType::Default,
        QuantFlavor::Imagemagick => QuantizationTableType::ImageMagick,
    };
    enc.set_quantization_tables(table.clone(), table);
    enc.encode(img.as_raw(), w as u16, h as u16, ColorType::Rgb)
        .map_err(|e| Error::ImageEncode(e.to_string()))?;
    Ok(buf)
}

/// Encodes at `quality` with `codec` and decodes the result.
pub fn jpeg_reencode(img: &RgbImage, quality: u8, codec: &JpegCodecConfig) -> Result<RgbImage> {
    let bytes = jpeg_encode(img, quality, codec)?;
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Jpeg)
        .map_err(|e| Error::ImageDecode { path: "<jpeg buffer>".into(), msg: e.to_string() })?;
    Ok(decoded.to_rgb8())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn mse(a: &RgbImage, b: &RgbImage) -> f64 {
        a.as_raw().iter().zip(b.as_raw()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.as_raw().len() as f64
    }

    fn textured(seed: u64) -> RgbImage {
        let mut r = crate::rng::stream(seed);
        RgbImage::from_fn(64, 48, |x, y| {
            let base = ((x as f64 * 0.3).sin() * 60.0 + (y as f64 * 0.2).cos() * 40.0 + 128.0) as i32;
            let n: i32 = r.random_range(-30..=30);
            let v = (base + n).clamp(0, 255) as u8;
            image::Rgb([v, v.wrapping_add(40), 255 - v])
        })
    }

    #[test]
    fn reencode_is_deterministic() {
        let img = textured(1);
        for codec in JpegCodecConfig::defaults() {
            assert_eq!(jpeg_reencode(&img, 75, &codec).unwrap(), jpeg_reencode(&img, 75, &codec).unwrap());
        }
    }

    #[test]
    fn flat_gray_survives_quality_50() {
        let img = RgbImage::from_pixel(40, 40, image::Rgb([128, 128, 128]));
        for codec in JpegCodecConfig::defaults() {
            let out = jpeg_reencode(&img, 50, &codec).unwrap();
            let dev = img.as_raw().iter().zip(out.as_raw()).map(|(&a, &b)| (a as i32 - b as i32).abs()).max().unwrap();
            assert!(dev <= 1, "{}: deviation {dev}", codec.variant_id);
        }
    }

    #[test]
    fn lower_quality_loses_more() {
        for seed in 0..3 {
            let img = textured(seed);
            for codec in JpegCodecConfig::defaults() {
                let lo = mse(&img, &jpeg_reencode(&img, 30, &codec).unwrap());
                let hi = mse(&img, &jpeg_reencode(&img, 90, &codec).unwrap());
                assert!(lo >= hi, "{}: q30 {lo} < q90 {hi}", codec.variant_id);
            }
        }
    }

    #[test]
    fn codecs_differ() {
        let img = textured(7);
        let [a, b] = [JpegCodecConfig::annexk_420(), JpegCodecConfig::imagemagick_444()].map(|c| jpeg_encode(&img, 60, &c).unwrap());
        assert_ne!(a, b);
    }

    #[test]
    fn rejects_bad_quality() {
        let img = textured(0);
        assert!(jpeg_reencode(&img, 0, &JpegCodecConfig::annexk_420()).is_err());
        assert!(jpeg_reencode(&img, 101, &JpegCodecConfig::annexk_420()).is_err());
    }
}
