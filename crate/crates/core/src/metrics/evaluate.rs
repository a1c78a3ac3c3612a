use std::collections::BTreeMap;
use std::fmt::Write as _;

use image::RgbImage;
use log::warn;
use serde::{Deserialize, Serialize};

use super::ap::{accuracy_at_threshold, average_precision, mean_ap, oracle_threshold, pr_curve};
use super::calibrate::CalibrationResult;
use super::{ScoreEntry, ScoreSet};
use crate::corpus::{center_crop, resize_short_side, DatasetManifest, ImageRecord, Split};
use crate::detector::DetectorModel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeMode {
    /// Center-crop the preprocessed image directly.
    #[default]
    None,
    /// Resize the shorter side to 256 before center-cropping.
    Resize256,
}

impl ResizeMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ResizeMode::None),
            "256" | "resize256" => Ok(ResizeMode::Resize256),
            other => Err(Error::InvalidArgument(format!("unknown resize mode `{other}` (expected none or 256)"))),
        }
    }
}

/// Test-time perturbation applied after resizing and before the center crop.
pub type Perturbation<'a> = &'a dyn Fn(&RgbImage) -> Result<RgbImage>;

/// The evaluation input pipeline for one preprocessed image: optional resize,
/// optional perturbation, center crop.
pub fn eval_input(img: &RgbImage, resize: ResizeMode, perturb: Option<Perturbation>, size: u32) -> Result<RgbImage> {
    let resized = match resize {
        ResizeMode::None => None,
        ResizeMode::Resize256 => Some(resize_short_side(img, 256)),
    };
    let base = resized.as_ref().unwrap_or(img);
    match perturb {
        Some(f) => center_crop(&f(base)?, size),
        None => center_crop(base, size),
    }
}

/// Scores the given records through [`eval_input`].
pub fn score_records<T: Scalar>(
    model: &DetectorModel<T>,
    manifest: &DatasetManifest,
    records: &[&ImageRecord],
    resize: ResizeMode,
    perturb: Option<Perturbation>,
) -> Result<ScoreSet<T>> {
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        let img = manifest.load(r)?;
        let input = eval_input(&img, resize, perturb, model.spec.input_size)?;
        entries.push(ScoreEntry {
            id: r.id.clone(),
            source_id: r.source_id.clone(),
            category: r.category.clone(),
            label: r.label,
            score: model.logit(&input)?,
        });
    }
    ScoreSet::new(entries)
}

pub fn test_records(manifest: &DatasetManifest) -> Vec<&ImageRecord> {
    manifest.split(Split::Test).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub resize_mode: ResizeMode,
    pub calibration: Option<CalibrationResult>,
    pub config_fingerprint: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub real: usize,
    pub fake: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryBreakdown {
    pub accuracies: BTreeMap<String, f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceReport {
    pub ap: f64,
    pub acc_uncal: f64,
    pub acc_oracle: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc_two_shot: Option<f64>,
    pub pr: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_category: Option<CategoryBreakdown>,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_source: BTreeMap<String, SourceReport>,
    pub map: f64,
    pub config_fingerprint: String,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl EvaluationReport {
    /// Aggregates a score set per source (and per category for sources with
    /// more than one). Sources lacking either class are omitted with a warning.
    pub fn from_scores<T: Scalar>(scores: &ScoreSet<T>, calibration: Option<&CalibrationResult>, fingerprint: &str) -> Self {
        let mut per_source = BTreeMap::new();
        let mut warnings = Vec::new();
        for (source, set) in scores.by_source() {
            let (s, l) = (set.scores(), set.labels());
            let fake = l.iter().filter(|&&x| x).count();
            let counts = Counts { real: l.len() - fake, fake };
            let ap = match average_precision(&s, &l) {
                Ok(ap) => ap,
                Err(_) => {
                    let msg = format!("source `{source}` omitted: test group has {} real and {} fake images", counts.real, counts.fake);
                    warn!("{msg}");
                    warnings.push(msg);
                    continue;
                }
            };
            let pr = pr_curve(&s, &l).expect("two classes present").into_iter().map(|(r, p)| [r, p]).collect();
            let cats = set.by_category();
            let per_category = (cats.len() > 1).then(|| {
                let accuracies: BTreeMap<String, f64> =
                    cats.iter().map(|(c, cs)| (c.clone(), accuracy_at_threshold(&cs.scores(), &cs.labels(), 0.0))).collect();
                let mean = accuracies.values().sum::<f64>() / accuracies.len() as f64;
                CategoryBreakdown { accuracies, mean }
            });
            per_source.insert(
                source,
                SourceReport {
                    ap,
                    acc_uncal: accuracy_at_threshold(&s, &l, 0.0),
                    acc_oracle: oracle_threshold(&s, &l).1,
                    acc_two_shot: calibration.map(|c| accuracy_at_threshold(&s, &l, c.threshold())),
                    pr,
                    per_category,
                    counts,
                },
            );
        }
        let aps: Vec<f64> = per_source.values().map(|r: &SourceReport| r.ap).collect();
        let map = if aps.is_empty() { 0.0 } else { mean_ap(&aps) };
        EvaluationReport { per_source, map, config_fingerprint: fingerprint.to_string(), warnings }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `source,recall,precision` rows for every PR point, origin excluded.
    pub fn pr_csv(&self) -> String {
        let mut out = String::from("source,recall,precision\n");
        for (source, r) in &self.per_source {
            for [rec, prec] in &r.pr {
                writeln!(out, "{source},{rec},{prec}").expect("write to string");
            }
        }
        out
    }
}

/// Scores the manifest's test split without augmentation and builds the report.
pub fn evaluate<T: Scalar>(model: &DetectorModel<T>, manifest: &DatasetManifest, opts: &EvalOptions) -> Result<(EvaluationReport, ScoreSet<T>)> {
    let records = test_records(manifest);
    if records.is_empty() {
        return Err(Error::EmptySplit("manifest has no test records".into()));
    }
    let scores = score_records(model, manifest, &records, opts.resize_mode, None)?;
    let report = EvaluationReport::from_scores(&scores, opts.calibration.as_ref(), &opts.config_fingerprint);
    Ok((report, scores))
}
