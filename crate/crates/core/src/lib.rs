//! Detection of CNN-generated images.
//!
//! The crate covers the whole experimental loop: manifest-driven corpora
//! (and a synthetic toy corpus), blur/JPEG training augmentation, a small
//! from-scratch convolutional detector with a plateau-driven learning-rate
//! schedule, threshold-free and thresholded metrics, robustness sweeps,
//! averaged high-pass spectra, deep-image-prior reconstructions and the
//! experiment harness that ties them together.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root pick the concrete types used by the CLI.

pub mod augment;
pub mod corpus;
pub mod detector;
pub mod dip;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod plot;
pub mod rng;
pub mod robustness;
pub mod scalar;
pub mod spectra;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Detector with single-precision weights, as trained by the CLI.
pub type Detector = detector::DetectorModel<f32>;
/// Score set produced by [`Detector`].
pub type ScoreSet = metrics::ScoreSet<f32>;
/// Double-precision score set, used for synthetic metric studies.
pub type ScoreSet64 = metrics::ScoreSet<f64>;
/// Averaged spectrum in double precision.
pub type SpectrumMap = spectra::SpectrumMap<f64>;
/// Robustness curve for [`Detector`].
pub type RobustnessCurve = robustness::RobustnessCurve<f32>;
/// Planar float image in single precision.
pub type Tensor = tensor::Tensor<f32>;
