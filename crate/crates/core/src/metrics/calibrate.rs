use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{crop, CropMode};
use crate::detector::DetectorModel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Maximum-likelihood fit of `P(fake | z) = σ(slope·z + intercept)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub slope: f64,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The two classes are perfectly separated by some threshold, so the
    /// unregularized optimum lies at infinity and the fit is only indicative.
    pub near_separable: bool,
}

fn nll(x: &[f64], y: &[bool], a: f64, b: f64) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let z = a * xi + b;
            // log(1 + e^z) − y·z, computed stably.
            z.max(0.0) + (-z.abs()).exp().ln_1p() - if yi { z } else { 0.0 }
        })
        .sum()
}

/// Damped Newton iterations (iteratively reweighted least squares) with
/// backtracking; stops when the parameter change drops below `1e-8` or after
/// 100 iterations.
pub fn fit_logistic(x: &[f64], y: &[bool]) -> Result<LogisticFit> {
    assert_eq!(x.len(), y.len(), "one label per logit");
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::DegenerateCalibration("calibration logits contain a single class".into()));
    }
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(hi > lo) {
        return Err(Error::DegenerateCalibration("all calibration logits are equal".into()));
    }
    let max_real = x.iter().zip(y).filter(|p| !*p.1).map(|p| *p.0).fold(f64::NEG_INFINITY, f64::max);
    let min_fake = x.iter().zip(y).filter(|p| *p.1).map(|p| *p.0).fold(f64::INFINITY, f64::min);
    let near_separable = max_real < min_fake;

    let rate = pos as f64 / y.len() as f64;
    let (mut a, mut b) = (0.0, (rate / (1.0 - rate)).ln());
    let mut f = nll(x, y, a, b);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=100 {
        iterations = it;
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(y) {
            let p = crate::nn::sigmoid(a * xi + b);
            let r = p - if yi { 1.0 } else { 0.0 };
            let w = p * (1.0 - p);
            ga += r * xi;
            gb += r;
            haa += w * xi * xi;
            hab += w * xi;
            hbb += w;
        }
        let det = haa * hbb - hab * hab;
        let (mut da, mut db) = if det > 1e-300 {
            (-(hbb * ga - hab * gb) / det, -(haa * gb - hab * ga) / det)
        } else {
            (-ga, -gb)
        };
        let norm = da.abs().max(db.abs());
        if norm > 10.0 {
            da *= 10.0 / norm;
            db *= 10.0 / norm;
        }
        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-10 {
            let fn_ = nll(x, y, a + step * da, b + step * db);
            if fn_ <= f {
                a += step * da;
                b += step * db;
                f = fn_;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || (step * da).abs().max((step * db).abs()) < 1e-8 {
            converged = true;
            break;
        }
    }
    Ok(LogisticFit { slope: a, intercept: b, iterations, converged, near_separable })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Logit offset: the calibrated fake probability is `σ(logit + bias)`.
    pub bias: f64,
    /// Diagnostics from the logistic fit; not applied.
    pub fitted_slope: f64,
    pub fitted_intercept: f64,
    pub near_separable: bool,
    pub n_crops: usize,
    pub real_id: String,
    pub fake_id: String,
}

impl CalibrationResult {
    /// Logit threshold equivalent to `σ(logit + bias) ≥ 0.5`.
    pub fn threshold(&self) -> f64 {
        -self.bias
    }
}

/// Fits the logistic model to labeled logits and keeps only the location of
/// its decision boundary: `bias = intercept / slope`, so that
/// `logit + bias = 0` exactly where the fitted probability is one half.
pub fn calibrate_logits(logits: &[f64], labels: &[bool]) -> Result<CalibrationResult> {
    let fit = fit_logistic(logits, labels)?;
    if !(fit.slope > 0.0) {
        return Err(Error::DegenerateCalibration(format!(
            "fitted slope {} is not positive; the pair is ranked the wrong way",
            fit.slope
        )));
    }
    Ok(CalibrationResult {
        bias: fit.intercept / fit.slope,
        fitted_slope: fit.slope,
        fitted_intercept: fit.intercept,
        near_separable: fit.near_separable,
        n_crops: logits.len() / 2,
        real_id: String::new(),
        fake_id: String::new(),
    })
}

/// Scores `n_crops` random crops of one real and one fake image and
/// calibrates on the resulting logits.
pub fn two_shot_calibrate<T: Scalar, R: Rng + ?Sized>(
    model: &DetectorModel<T>,
    real: (&str, &RgbImage),
    fake: (&str, &RgbImage),
    n_crops: usize,
    rng: &mut R,
) -> Result<CalibrationResult> {
    if n_crops == 0 {
        return Err(Error::InvalidArgument("n_crops must be at least 1".into()));
    }
    let size = model.spec.input_size;
    let mut logits = Vec::with_capacity(2 * n_crops);
    let mut labels = Vec::with_capacity(2 * n_crops);
    for (img, is_fake) in [(real.1, false), (fake.1, true)] {
        for _ in 0..n_crops {
            let (c, _) = crop(img, size, CropMode::Random, rng)?;
            logits.push(model.logit(&c)?.as_f64());
            labels.push(is_fake);
        }
    }
    let mut cal = calibrate_logits(&logits, &labels)?;
    cal.n_crops = n_crops;
    cal.real_id = real.0.to_string();
    cal.fake_id = fake.0.to_string();
    Ok(cal)
}
