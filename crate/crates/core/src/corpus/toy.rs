use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ImageRecord, Label, Split};
use super::preprocess::PreprocessRule;
use crate::error::{Error, Result};
use crate::nn::{fill_normal, Conv2d, Layer, Padding, Sequential, UpsampleMode};
use crate::rng::{derived_stream, Stream};
use crate::tensor::{quantize_u8, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    DecoderNearest,
    DecoderBilinear,
    DeadLeaves,
}

impl ToyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ToyKind::DecoderNearest => "decoder_nearest",
            ToyKind::DecoderBilinear => "decoder_bilinear",
            ToyKind::DeadLeaves => "dead_leaves",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "decoder_nearest" => Ok(ToyKind::DecoderNearest),
            "decoder_bilinear" => Ok(ToyKind::DecoderBilinear),
            "dead_leaves" => Ok(ToyKind::DeadLeaves),
            other => Err(Error::InvalidArgument(format!("unknown toy corpus kind `{other}`"))),
        }
    }
}

/// Parameters of a synthetic corpus. `n` counts images per label; the first
/// `train` fraction of indices go to the training split, the next `val`
/// fraction to validation and the rest to test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub kind: ToyKind,
    pub n: usize,
    #[serde(default = "default_size")]
    pub size: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train: f64,
    #[serde(default)]
    pub val: f64,
}

fn default_size() -> u32 {
    256
}

impl ToySpec {
    pub fn new(kind: ToyKind, n: usize, size: u32, seed: u64) -> Self {
        ToySpec { kind, n, size, seed, train: 0.0, val: 0.0 }
    }

    pub fn with_splits(mut self, train: f64, val: f64) -> Self {
        self.train = train;
        self.val = val;
        self
    }

    fn split_of(&self, i: usize) -> Split {
        let n_train = (self.n as f64 * self.train).round() as usize;
        let n_val = (self.n as f64 * self.val).round() as usize;
        if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

const DECODER_STAGES: usize = 3;
const DECODER_WIDTH: usize = 8;

/// Fixed-weight upsampling-convolutional generator: noise at `1/8` of the
/// output resolution, then three stages of 2× upsampling, a random 3×3
/// convolution and a pointwise nonlinearity, affinely squashed to 8 bits.
///
/// The weights depend on the seed only; the upsampling mode changes the
/// interpolation and nothing else.
#[derive(Debug, Clone)]
pub struct ToyDecoder {
    net: Sequential<f32>,
    gain: f32,
}

impl ToyDecoder {
    pub fn new(mode: UpsampleMode, seed: u64) -> Self {
        let tag = match mode {
            UpsampleMode::Nearest => "nearest",
            UpsampleMode::Bilinear => "bilinear",
        };
        let mut rng = derived_stream(seed, &["toy-decoder-weights"]);
        let mut layers = Vec::new();
        for stage in 0..DECODER_STAGES {
            let out_c = if stage + 1 == DECODER_STAGES { 3 } else { DECODER_WIDTH };
            let mut conv = Conv2d::zeros(DECODER_WIDTH, out_c, 3, 1, 1, Padding::Reflect);
            fill_normal(&mut conv.weight, &mut rng, 1.5 / ((DECODER_WIDTH * 9) as f64).sqrt());
            layers.push(Layer::Upsample { factor: 2, mode });
            layers.push(Layer::Conv(conv));
            if stage + 1 < DECODER_STAGES {
                layers.push(Layer::LeakyRelu(0.2));
            }
        }
        let mut dec = ToyDecoder { net: Sequential::new(layers), gain: 1.0 };
        // Affine squash `127.5 + gain * x`, with the gain set so a probe draw
        // has std 64: about 95% of pixels land inside [0, 255] unclipped.
        let probe = dec.raw(&mut derived_stream(seed, &["toy-decoder-probe", tag]), 64);
        let n = probe.data.len() as f64;
        let mean = probe.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = probe.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        dec.gain = (64.0 / var.sqrt().max(1e-12)) as f32;
        dec
    }

    fn raw(&self, rng: &mut Stream, size: usize) -> Tensor<f32> {
        let base = size.div_ceil(1 << DECODER_STAGES);
        let mut z = Tensor::zeros(DECODER_WIDTH, base, base);
        fill_normal(&mut z.data, rng, 1.0);
        self.net.forward(&z)
    }

    pub fn generate(&self, rng: &mut Stream, size: u32) -> RgbImage {
        let out = self.raw(rng, size as usize);
        let n = out.h * out.w;
        RgbImage::from_fn(size, size, |x, y| {
            let i = y as usize * out.w + x as usize;
            image::Rgb(std::array::from_fn(|c| quantize_u8(127.5 + (self.gain * out.data[c * n + i]) as f64)))
        })
    }
}

/// Occluding-disc composite painted front to back until every pixel is
/// covered.
pub fn dead_leaves(rng: &mut Stream, size: u32) -> RgbImage {
    let s = size as usize;
    let scale = size as f64 / 256.0;
    let mut img = RgbImage::new(size, size);
    let mut filled = vec![false; s * s];
    let mut remaining = s * s;
    let mut color = [0u8; 3];
    for _ in 0..50_000 {
        if remaining == 0 {
            break;
        }
        let cx = rng.random_range(-10.0..s as f64 + 10.0);
        let cy = rng.random_range(-10.0..s as f64 + 10.0);
        let r = rng.random_range(4.0..60.0) * scale;
        color = [rng.random(), rng.random(), rng.random()];
        let x0 = (cx - r).floor().max(0.0) as usize;
        let x1 = ((cx + r).ceil() as isize).clamp(0, s as isize - 1) as usize;
        let y0 = (cy - r).floor().max(0.0) as usize;
        let y1 = ((cy + r).ceil() as isize).clamp(0, s as isize - 1) as usize;
        if cx + r < 0.0 || cy + r < 0.0 || x0 >= s || y0 >= s {
            continue;
        }
        for y in y0..=y1 {
            let dy = y as f64 - cy;
            for x in x0..=x1 {
                let dx = x as f64 - cx;
                let i = y * s + x;
                if !filled[i] && dx * dx + dy * dy < r * r {
                    filled[i] = true;
                    remaining -= 1;
                    img.put_pixel(x as u32, y as u32, image::Rgb(color));
                }
            }
        }
    }
    if remaining > 0 {
        for (i, f) in filled.iter().enumerate() {
            if !f {
                img.put_pixel((i % s) as u32, (i / s) as u32, image::Rgb(color));
            }
        }
    }
    img
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::ImageEncode(format!("{}: {e}", path.display())))
}

/// Writes a synthetic corpus under `out_dir` and returns its manifest
/// (also saved as `out_dir/manifest.jsonl`).
///
/// Decoder kinds pair `n` decoder outputs (fake) with `n` dead-leaves
/// images (real) under one balanced source; `dead_leaves` emits `n` real
/// images only.
pub fn synth_toy_corpus(spec: &ToySpec, out_dir: &Path) -> Result<DatasetManifest> {
    if spec.n == 0 {
        return Err(Error::InvalidArgument("toy corpus needs n >= 1".into()));
    }
    if spec.size < 224 {
        return Err(Error::InvalidArgument(format!("toy image size {} is below 224", spec.size)));
    }
    let source = spec.kind.as_str().to_string();
    let decoder = match spec.kind {
        ToyKind::DecoderNearest => Some(ToyDecoder::new(UpsampleMode::Nearest, spec.seed)),
        ToyKind::DecoderBilinear => Some(ToyDecoder::new(UpsampleMode::Bilinear, spec.seed)),
        ToyKind::DeadLeaves => None,
    };
    let mut manifest = DatasetManifest::empty(out_dir);
    manifest.sources.insert(source.clone(), PreprocessRule::keep());
    manifest.balanced = decoder.is_some();
    manifest.metadata = serde_json::json!({ "toy": spec, "format": "png" });

    for i in 0..spec.n {
        let split = spec.split_of(i);
        let idx = i.to_string();
        let mut emit = |label: Label, img: RgbImage| -> Result<()> {
            let id = format!("{}{:05}", if label.is_fake() { "f" } else { "r" }, i);
            let rel = PathBuf::from(label.as_str()).join(format!("{id}.png"));
            save_png(&img, &out_dir.join(&rel))?;
            manifest.records.push(ImageRecord {
                id,
                path: rel,
                label,
                source_id: source.clone(),
                category: "toy".into(),
                split,
            });
            Ok(())
        };
        if let Some(dec) = &decoder {
            let mut rng = derived_stream(spec.seed, &["toy-noise", spec.kind.as_str(), &idx]);
            emit(Label::Fake, dec.generate(&mut rng, spec.size))?;
        }
        let mut rng = derived_stream(spec.seed, &["toy-leaves", spec.kind.as_str(), &idx]);
        emit(Label::Real, dead_leaves(&mut rng, spec.size))?;
    }
    manifest.validate()?;
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
