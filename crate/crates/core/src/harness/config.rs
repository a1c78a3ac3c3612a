use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentationPolicy;
use crate::corpus::{Label, Split, ToyKind, ToySpec};
use crate::detector::{BackboneSpec, TrainSchedule, ARCHITECTURES};
use crate::dip::DipConfig;
use crate::error::{Error, Result};
use crate::metrics::ResizeMode;
use crate::rng::sha256_hex;
use crate::robustness::{PerturbationGrid, PerturbationKind};

/// One experiment, read from a TOML file. Data sets are referenced by
/// string: `toy:<name>` for a `[[data.toy]]` entry, `dip` for the `[dip]`
/// output, or a manifest path (relative to the config file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataSection,
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub eval: Vec<EvalSection>,
    pub calibration: Option<CalibrationSection>,
    #[serde(default)]
    pub robustness: Vec<RobustnessSection>,
    pub spectra: Option<SpectraSection>,
    pub rank: Option<RankSection>,
    pub dip: Option<DipSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub toy: Vec<ToyEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyEntry {
    pub name: String,
    pub kind: ToyKind,
    pub n: usize,
    #[serde(default = "default_toy_size")]
    pub size: u32,
    /// Defaults to the experiment seed.
    pub seed: Option<u64>,
    #[serde(default)]
    pub train: f64,
    #[serde(default)]
    pub val: f64,
}

fn default_toy_size() -> u32 {
    256
}

impl ToyEntry {
    pub fn spec(&self, global_seed: u64) -> ToySpec {
        ToySpec::new(self.kind, self.n, self.size, self.seed.unwrap_or(global_seed)).with_splits(self.train, self.val)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub data: String,
    /// Validation data; defaults to the val split of `data`.
    pub val_data: Option<String>,
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default)]
    pub backbone: BackboneSpec,
    #[serde(default)]
    pub schedule: TrainSchedule,
    pub sample_fraction: Option<f64>,
    pub categories: Option<Vec<String>>,
    /// Use these weights instead of training.
    pub checkpoint: Option<PathBuf>,
}

fn default_preset() -> String {
    "blur_jpeg_05".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub name: String,
    pub data: String,
    #[serde(default)]
    pub resize_mode: ResizeMode,
}

/// Either two image files, or two record ids of a data set (by default the
/// lowest-id real and fake training records).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    pub real_image: Option<PathBuf>,
    pub fake_image: Option<PathBuf>,
    pub data: Option<String>,
    pub real_id: Option<String>,
    pub fake_id: Option<String>,
    #[serde(default = "default_crops")]
    pub n_crops: usize,
}

fn default_crops() -> usize {
    128
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessSection {
    pub data: String,
    pub kind: PerturbationKind,
    /// Comma-separated levels; defaults to the standard grid of `kind`.
    pub levels: Option<String>,
    #[serde(default)]
    pub resize_mode: ResizeMode,
}

impl RobustnessSection {
    pub fn grid(&self) -> Result<PerturbationGrid> {
        match &self.levels {
            Some(l) => PerturbationGrid::from_levels(self.kind, l),
            None => Ok(PerturbationGrid::default_for(self.kind)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectraSection {
    pub data: Vec<String>,
    #[serde(default = "default_spectrum_n")]
    pub n: usize,
    #[serde(default = "default_spectrum_labels")]
    pub labels: Vec<Label>,
    /// Restrict to one split; all records by default.
    pub split: Option<Split>,
    /// Center-crop every image to this side first.
    pub crop: Option<u32>,
}

fn default_spectrum_n() -> usize {
    2000
}

fn default_spectrum_labels() -> Vec<Label> {
    vec![Label::Fake, Label::Real]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankSection {
    pub data: String,
    #[serde(default = "default_percentiles")]
    pub percentiles: Vec<f64>,
    /// Rank real and fake images together.
    #[serde(default)]
    pub combined: bool,
}

pub fn default_percentiles() -> Vec<f64> {
    vec![0.0, 25.0, 50.0, 75.0, 100.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DipSection {
    /// Data set whose real images are reconstructed.
    pub data: String,
    #[serde(default)]
    pub config: DipConfig,
    #[serde(default = "default_oversample")]
    pub oversample_real: usize,
    /// Use only the first `limit` real records (by id).
    pub limit: Option<usize>,
}

fn default_oversample() -> usize {
    6
}

/// How a data reference string resolves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataRef {
    Toy(String),
    Dip,
    Manifest(PathBuf),
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))
    }

    /// Reads a TOML config, or a JSON snapshot written by a previous run.
    /// Relative paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Validation(format!("config snapshot: {e}")))?
        } else {
            Self::parse(&text)?
        };
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_ref = |s: &mut String| {
            if !s.starts_with("toy:") && s != "dip" && Path::new(s.as_str()).is_relative() {
                *s = base.join(s.as_str()).to_string_lossy().into_owned();
            }
        };
        fix(&mut self.output_dir);
        if let Some(t) = &mut self.train {
            fix_ref(&mut t.data);
            if let Some(v) = &mut t.val_data {
                fix_ref(v);
            }
            if let Some(c) = &mut t.checkpoint {
                fix(c);
            }
        }
        self.eval.iter_mut().for_each(|e| fix_ref(&mut e.data));
        if let Some(c) = &mut self.calibration {
            c.real_image.iter_mut().for_each(fix);
            c.fake_image.iter_mut().for_each(fix);
            c.data.iter_mut().for_each(fix_ref);
        }
        self.robustness.iter_mut().for_each(|r| fix_ref(&mut r.data));
        if let Some(s) = &mut self.spectra {
            s.data.iter_mut().for_each(fix_ref);
        }
        if let Some(r) = &mut self.rank {
            fix_ref(&mut r.data);
        }
        if let Some(d) = &mut self.dip {
            fix_ref(&mut d.data);
        }
    }

    pub fn data_ref(&self, s: &str) -> Result<DataRef> {
        if let Some(name) = s.strip_prefix("toy:") {
            if !self.data.toy.iter().any(|t| t.name == name) {
                return Err(Error::Validation(format!("data reference `{s}` names no [[data.toy]] entry")));
            }
            Ok(DataRef::Toy(name.to_string()))
        } else if s == "dip" {
            if self.dip.is_none() {
                return Err(Error::Validation("data reference `dip` needs a [dip] section".into()));
            }
            Ok(DataRef::Dip)
        } else {
            let p = PathBuf::from(s);
            if !p.is_file() {
                return Err(Error::Validation(format!("manifest `{s}` does not exist")));
            }
            Ok(DataRef::Manifest(p))
        }
    }

    /// Checks names, references and numeric ranges without doing any work.
    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for t in &self.data.toy {
            if !names.insert(&t.name) {
                return Err(Error::Validation(format!("duplicate toy corpus name `{}`", t.name)));
            }
            if t.n == 0 || t.size < 224 {
                return Err(Error::Validation(format!("toy corpus `{}` needs n >= 1 and size >= 224", t.name)));
            }
            if !(t.train >= 0.0 && t.val >= 0.0 && t.train + t.val <= 1.0) {
                return Err(Error::Validation(format!("toy corpus `{}` has bad split fractions", t.name)));
            }
        }
        if let Some(d) = &self.dip {
            if d.data == "dip" {
                return Err(Error::Validation("[dip] cannot read its own output".into()));
            }
            self.data_ref(&d.data)?;
            d.config.validate()?;
        }
        if let Some(t) = &self.train {
            self.data_ref(&t.data)?;
            if let Some(v) = &t.val_data {
                self.data_ref(v)?;
            }
            AugmentationPolicy::preset(&t.preset).map_err(|_| Error::UnknownPreset(t.preset.clone()))?;
            if !ARCHITECTURES.contains(&t.backbone.architecture_id.as_str()) {
                return Err(Error::UnknownArchitecture(t.backbone.architecture_id.clone()));
            }
            t.schedule.validate()?;
            if let Some(f) = t.sample_fraction {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::Validation(format!("sample_fraction {f} is outside (0, 1]")));
                }
            }
            if let Some(c) = &t.checkpoint {
                if !c.is_file() {
                    return Err(Error::Validation(format!("checkpoint {} does not exist", c.display())));
                }
            }
        }
        let needs_model = !self.eval.is_empty() || !self.robustness.is_empty() || self.rank.is_some() || self.calibration.is_some();
        if needs_model && self.train.is_none() {
            return Err(Error::Validation("evaluation stages need a [train] section".into()));
        }
        let mut eval_names = BTreeSet::new();
        for e in &self.eval {
            if !eval_names.insert(&e.name) {
                return Err(Error::Validation(format!("duplicate eval name `{}`", e.name)));
            }
            self.data_ref(&e.data)?;
        }
        if let Some(c) = &self.calibration {
            match (&c.real_image, &c.fake_image, &c.data) {
                (Some(r), Some(f), None) => {
                    for p in [r, f] {
                        if !p.is_file() {
                            return Err(Error::Validation(format!("calibration image {} does not exist", p.display())));
                        }
                    }
                }
                (None, None, Some(d)) => {
                    self.data_ref(d)?;
                }
                _ => return Err(Error::Validation("[calibration] needs real_image + fake_image, or data".into())),
            }
            if c.n_crops == 0 {
                return Err(Error::Validation("calibration n_crops must be at least 1".into()));
            }
        }
        for r in &self.robustness {
            self.data_ref(&r.data)?;
            r.grid()?;
        }
        if let Some(s) = &self.spectra {
            if s.n == 0 || s.data.is_empty() {
                return Err(Error::Validation("[spectra] needs data and n >= 1".into()));
            }
            for d in &s.data {
                self.data_ref(d)?;
            }
        }
        if let Some(r) = &self.rank {
            self.data_ref(&r.data)?;
            if r.percentiles.iter().any(|p| !(0.0..=100.0).contains(p)) {
                return Err(Error::Validation("rank percentiles must lie in [0, 100]".into()));
            }
        }
        Ok(())
    }

    /// Hash of the configuration with the output directory left out, so the
    /// same experiment written to two places has one fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}
