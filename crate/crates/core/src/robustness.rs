//! Test-time perturbation sweeps: AP as a function of blur or JPEG severity.

use std::cell::Cell;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::augment::{gaussian_blur, jpeg_reencode, JpegCodecConfig};
use crate::corpus::DatasetManifest;
use crate::detector::DetectorModel;
use crate::error::{Error, Result};
use crate::metrics::{average_precision, oracle_threshold, score_records, test_records, Counts, ResizeMode, ScoreSet};
use crate::rng::sha256_hex;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    Blur,
    Jpeg,
}

impl PerturbationKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "blur" => Ok(PerturbationKind::Blur),
            "jpeg" => Ok(PerturbationKind::Jpeg),
            other => Err(Error::InvalidArgument(format!("unknown perturbation `{other}` (expected blur or jpeg)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PerturbationKind::Blur => "blur",
            PerturbationKind::Jpeg => "jpeg",
        }
    }
}

/// One severity level: `Identity` means no perturbation (σ = 0 or lossless).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Identity,
    Sigma(f64),
    Quality(u8),
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Identity => write!(f, "identity"),
            Level::Sigma(s) => write!(f, "{s}"),
            Level::Quality(q) => write!(f, "{q}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationGrid {
    pub kind: PerturbationKind,
    pub levels: Vec<Level>,
    /// Codec for JPEG sweeps; one configuration for the whole sweep.
    #[serde(default = "JpegCodecConfig::annexk_420")]
    pub codec: JpegCodecConfig,
}

impl PerturbationGrid {
    /// σ ∈ {0, 0.5, …, 3}.
    pub fn default_blur() -> Self {
        let mut levels = vec![Level::Identity];
        levels.extend((1..=6).map(|k| Level::Sigma(k as f64 * 0.5)));
        PerturbationGrid { kind: PerturbationKind::Blur, levels, codec: JpegCodecConfig::annexk_420() }
    }

    /// Lossless, then quality 90 down to 30 in steps of 10.
    pub fn default_jpeg() -> Self {
        let mut levels = vec![Level::Identity];
        levels.extend((3..=9).rev().map(|k| Level::Quality(k * 10)));
        PerturbationGrid { kind: PerturbationKind::Jpeg, levels, codec: JpegCodecConfig::annexk_420() }
    }

    pub fn default_for(kind: PerturbationKind) -> Self {
        match kind {
            PerturbationKind::Blur => Self::default_blur(),
            PerturbationKind::Jpeg => Self::default_jpeg(),
        }
    }

    /// Parses levels like `0,1,2` (blur) or `lossless,90,50` (JPEG); prepends
    /// the identity level if it is missing.
    pub fn from_levels(kind: PerturbationKind, text: &str) -> Result<Self> {
        let mut levels = Vec::new();
        for tok in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let bad = || Error::InvalidArgument(format!("bad {} level `{tok}`", kind.as_str()));
            let level = match kind {
                PerturbationKind::Blur => {
                    let s: f64 = tok.parse().map_err(|_| bad())?;
                    if s == 0.0 {
                        Level::Identity
                    } else {
                        Level::Sigma(s)
                    }
                }
                PerturbationKind::Jpeg if tok == "lossless" => Level::Identity,
                PerturbationKind::Jpeg => Level::Quality(tok.parse().map_err(|_| bad())?),
            };
            levels.push(level);
        }
        if levels.first() != Some(&Level::Identity) {
            levels.retain(|l| *l != Level::Identity);
            levels.insert(0, Level::Identity);
        }
        let grid = PerturbationGrid { kind, levels, codec: JpegCodecConfig::annexk_420() };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.first() != Some(&Level::Identity) {
            return Err(Error::Validation("perturbation grid must start with the identity level".into()));
        }
        for l in &self.levels[1..] {
            let ok = match (self.kind, l) {
                (PerturbationKind::Blur, Level::Sigma(s)) => *s > 0.0 && s.is_finite(),
                (PerturbationKind::Jpeg, Level::Quality(q)) => (1..=100).contains(q),
                _ => false,
            };
            if !ok {
                return Err(Error::Validation(format!("level {l} does not belong in a {} grid", self.kind.as_str())));
            }
        }
        Ok(())
    }

    /// Label used in CSV exports: σ for blur, quality or `lossless` for JPEG.
    pub fn level_label(&self, level: &Level) -> String {
        match (self.kind, level) {
            (PerturbationKind::Blur, Level::Identity) => "0".into(),
            (PerturbationKind::Jpeg, Level::Identity) => "lossless".into(),
            (_, l) => l.to_string(),
        }
    }

    pub fn fingerprint(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("grid serializes").as_bytes())
    }

    fn apply(&self, level: &Level, img: &RgbImage) -> Result<RgbImage> {
        match *level {
            Level::Identity => Ok(img.clone()),
            Level::Sigma(s) => Ok(gaussian_blur(img, s)),
            Level::Quality(q) => jpeg_reencode(img, q, &self.codec),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub level: Level,
    pub ap: f64,
    pub acc_oracle: f64,
    /// Images the perturbation was applied to, by label.
    pub applied: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCurve<T> {
    pub grid: PerturbationGrid,
    pub model_fingerprint: String,
    pub points: Vec<CurvePoint>,
    /// Score list per level, in grid order.
    pub level_scores: Vec<ScoreSet<T>>,
}

/// Scores every test image at every level; the perturbation is applied after
/// source preprocessing (and optional resize) and before the center crop.
pub fn robustness_sweep<T: Scalar>(
    model: &DetectorModel<T>,
    manifest: &DatasetManifest,
    grid: &PerturbationGrid,
    resize: ResizeMode,
    model_fingerprint: &str,
) -> Result<RobustnessCurve<T>> {
    grid.validate()?;
    let records = test_records(manifest);
    if records.is_empty() {
        return Err(Error::EmptySplit("manifest has no test records".into()));
    }
    let mut points = Vec::with_capacity(grid.levels.len());
    let mut level_scores = Vec::with_capacity(grid.levels.len());
    for level in &grid.levels {
        let scores = if *level == Level::Identity {
            score_records(model, manifest, &records, resize, None)?
        } else {
            let calls = Cell::new(0usize);
            let f = |img: &RgbImage| {
                calls.set(calls.get() + 1);
                grid.apply(level, img)
            };
            let s = score_records(model, manifest, &records, resize, Some(&f))?;
            debug_assert_eq!(calls.get(), records.len());
            s
        };
        let (s, l) = (scores.scores(), scores.labels());
        let fake = l.iter().filter(|&&x| x).count();
        let applied = if *level == Level::Identity { Counts { real: 0, fake: 0 } } else { Counts { real: l.len() - fake, fake } };
        points.push(CurvePoint { level: *level, ap: average_precision(&s, &l)?, acc_oracle: oracle_threshold(&s, &l).1, applied });
        level_scores.push(scores);
    }
    Ok(RobustnessCurve { grid: grid.clone(), model_fingerprint: model_fingerprint.to_string(), points, level_scores })
}

impl<T: Scalar> RobustnessCurve<T> {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,ap,acc_oracle\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", self.grid.level_label(&p.level), p.ap, p.acc_oracle));
        }
        out
    }

    /// `robustness_<kind>_<model fp>_<grid fp>`, shortened hashes.
    pub fn file_stem(&self) -> String {
        let m: String = self.model_fingerprint.chars().take(12).collect();
        let g: String = self.grid.fingerprint().chars().take(8).collect();
        format!("robustness_{}_{m}_{g}", self.grid.kind.as_str())
    }

    /// AP (blue) and oracle accuracy (red) per level.
    pub fn render(&self) -> RgbImage {
        crate::plot::line_plot(&[
            self.points.iter().map(|p| p.ap).collect(),
            self.points.iter().map(|p| p.acc_oracle).collect(),
        ])
    }

    /// Writes `<stem>.csv` and `<stem>.png` into `dir`; returns both paths.
    pub fn export(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stem = self.file_stem();
        let csv = dir.join(format!("{stem}.csv"));
        let png = dir.join(format!("{stem}.png"));
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        self.render()
            .save_with_format(&png, image::ImageFormat::Png)
            .map_err(|e| Error::ImageEncode(format!("{}: {e}", png.display())))?;
        Ok((csv, png))
    }
}
