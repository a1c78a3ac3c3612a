//! Binary real-vs-fake classifier: backbones, plateau-scheduled training and
//! scoring.

mod arch;
mod checkpoint;
mod schedule;
mod train;

pub use arch::{resnet50, tiny_cnn, ARCHITECTURES};
pub use checkpoint::{Checkpoint, TrainingFingerprint};
pub use schedule::{
    patience_for_classes, patience_for_data_percent, replay_schedule, PlateauScheduler, ScheduleReplay, SchedulerEvent,
    TrainSchedule,
};
pub use train::{train, EpochRecord, Termination, TrainHistory};

use std::path::PathBuf;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, Sequential};
use crate::rng::derived_stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Environment variable naming a checkpoint whose weights initialize
/// `pretrained = true` backbones.
pub const PRETRAINED_ENV: &str = "CNNDETECT_PRETRAINED";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub architecture_id: String,
    pub pretrained: bool,
    pub input_size: u32,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec { architecture_id: "resnet50".into(), pretrained: true, input_size: 224 }
    }
}

impl BackboneSpec {
    pub fn tiny() -> Self {
        BackboneSpec { architecture_id: "tiny_cnn".into(), pretrained: false, input_size: 224 }
    }
}

/// How RGB bytes become network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Scale to `[0, 1]`.
    Unit,
    /// Scale to `[0, 1]`, then standardize with the ImageNet channel statistics.
    Imagenet,
}

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel<T> {
    pub spec: BackboneSpec,
    pub net: Sequential<T>,
    pub normalization: Normalization,
    /// Added to the logit before the sigmoid to get a calibrated probability.
    pub calibration_bias: T,
}

/// Builds the backbone named by `spec`, randomly initialized from `seed`
/// (or loaded from [`PRETRAINED_ENV`] when `spec.pretrained` is set).
pub fn build_model<T: Scalar>(spec: &BackboneSpec, seed: u64) -> Result<DetectorModel<T>> {
    if spec.input_size < 32 {
        return Err(Error::InvalidArgument(format!("input size {} is too small", spec.input_size)));
    }
    let mut net = match spec.architecture_id.as_str() {
        "tiny_cnn" => tiny_cnn(),
        "resnet50" => resnet50(),
        other => return Err(Error::UnknownArchitecture(other.to_string())),
    };
    net.init_he(&mut derived_stream(seed, &["init", &spec.architecture_id]));
    let normalization = if spec.pretrained { Normalization::Imagenet } else { Normalization::Unit };
    let mut model = DetectorModel { spec: spec.clone(), net, normalization, calibration_bias: T::zero() };
    if spec.pretrained {
        let path = std::env::var_os(PRETRAINED_ENV).map(PathBuf::from);
        match path {
            Some(p) if spec.architecture_id == "resnet50" => {
                let ck = Checkpoint::load(&p)?;
                model.load_params(&ck.params)?;
            }
            _ => return Err(Error::PretrainedUnavailable(spec.architecture_id.clone())),
        }
    }
    Ok(model)
}

impl<T: Scalar> DetectorModel<T> {
    pub fn input_tensor(&self, img: &RgbImage) -> Result<Tensor<T>> {
        let n = self.spec.input_size;
        if img.width() != n || img.height() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n}x{n} RGB"),
                got: format!("{}x{}", img.width(), img.height()),
            });
        }
        Ok(match self.normalization {
            Normalization::Unit => Tensor::from_rgb_unit(img),
            Normalization::Imagenet => {
                Tensor::from_rgb_affine(img, IMAGENET_MEAN.map(T::lit), IMAGENET_STD.map(T::lit))
            }
        })
    }

    /// Fakeness logit of one `input_size × input_size` image.
    pub fn logit(&self, img: &RgbImage) -> Result<T> {
        let x = self.input_tensor(img)?;
        Ok(self.net.forward(&x).data[0])
    }

    /// Fakeness logits for a batch; each image is scored independently.
    pub fn score(&self, images: &[RgbImage]) -> Result<Vec<T>> {
        images.iter().map(|im| self.logit(im)).collect()
    }

    pub fn calibrated_probability(&self, logit: T) -> T {
        sigmoid(logit + self.calibration_bias)
    }

    pub fn params_f64(&self) -> Vec<Vec<f64>> {
        self.net.params().iter().map(|p| p.iter().map(|v| v.as_f64()).collect()).collect()
    }

    pub fn load_params(&mut self, params: &[Vec<f64>]) -> Result<()> {
        let mut dst = self.net.params_mut();
        if dst.len() != params.len() || dst.iter().zip(params).any(|(d, s)| d.len() != s.len()) {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameter tensors for {}", dst.len(), self.spec.architecture_id),
                got: format!("{} tensors", params.len()),
            });
        }
        for (d, s) in dst.iter_mut().zip(params) {
            d.iter_mut().zip(s).for_each(|(a, b)| *a = T::lit(*b));
        }
        Ok(())
    }
}
