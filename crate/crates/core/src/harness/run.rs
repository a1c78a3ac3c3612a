use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::{CalibrationSection, DataRef, ExperimentConfig, TrainSection};
use super::rank::{rank_images, Gallery};
use crate::augment::AugmentationPolicy;
use crate::corpus::{center_crop, load_image, load_manifest, sample_split, synth_toy_corpus, CategoryFilter, DatasetManifest, Label, Split};
use crate::detector::{build_model, train, Checkpoint, DetectorModel, TrainHistory, TrainingFingerprint};
use crate::dip::{build_dip_dataset, DipSummary};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, two_shot_calibrate, CalibrationResult, EvalOptions, EvaluationReport};
use crate::rng::{derived_stream, sha256_hex};
use crate::robustness::robustness_sweep;
use crate::spectra::{average_spectrum_from, SpectrumMap};

pub const CACHE_ENV: &str = "CNNDETECT_CACHE";
pub const INDEX_FILE: &str = "index.json";
pub const PARTIAL_FILE: &str = "PARTIAL";
pub const CONFIG_SNAPSHOT: &str = "config.resolved.json";

/// Bumped whenever cached artifacts change meaning.
const CACHE_VERSION: u32 = 1;

/// `$CNNDETECT_CACHE`, or `cnndetect-cache` under the system temp dir.
pub fn default_cache_root() -> PathBuf {
    std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("cnndetect-cache"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactIndex {
    pub config_fingerprint: String,
    /// Bundle-relative path -> sha256 of the file contents.
    pub artifacts: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
}

/// Everything one experiment produced; all files live under `dir` and are
/// listed in `index.json`.
#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub dir: PathBuf,
    pub config_fingerprint: String,
    pub evaluations: BTreeMap<String, EvaluationReport>,
    pub calibration: Option<CalibrationResult>,
    pub history: Option<TrainHistory>,
    pub robustness: Vec<PathBuf>,
    pub spectra: Vec<PathBuf>,
    pub gallery: Option<Gallery>,
    pub dip: Vec<DipSummary>,
    pub index: ArtifactIndex,
}

impl ReportBundle {
    fn new(dir: &Path, fingerprint: String) -> Self {
        ReportBundle {
            dir: dir.to_path_buf(),
            config_fingerprint: fingerprint.clone(),
            evaluations: BTreeMap::new(),
            calibration: None,
            history: None,
            robustness: Vec::new(),
            spectra: Vec::new(),
            gallery: None,
            dip: Vec::new(),
            index: ArtifactIndex { config_fingerprint: fingerprint, artifacts: BTreeMap::new(), failed_stage: None },
        }
    }

    /// Re-hashes every indexed file; returns the paths whose contents changed.
    pub fn verify(&self) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for (rel, hash) in &self.index.artifacts {
            let path = self.dir.join(rel);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if &sha256_hex(&bytes) != hash {
                bad.push(rel.clone());
            }
        }
        Ok(bad)
    }
}

/// Tracks the files written into the bundle directory.
struct Writer {
    dir: PathBuf,
    files: BTreeSet<PathBuf>,
}

impl Writer {
    fn write(&mut self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(rel.as_ref());
        if let Some(d) = path.parent() {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.insert(path.clone());
        Ok(path)
    }

    /// Registers a file some module already wrote under the bundle.
    fn adopt(&mut self, path: PathBuf) {
        self.files.insert(path);
    }

    fn index(&self, fingerprint: &str, failed_stage: Option<String>) -> Result<ArtifactIndex> {
        let mut artifacts = BTreeMap::new();
        for p in &self.files {
            let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
            let rel = p.strip_prefix(&self.dir).unwrap_or(p).to_string_lossy().replace('\\', "/");
            artifacts.insert(rel, sha256_hex(&bytes));
        }
        Ok(ArtifactIndex { config_fingerprint: fingerprint.to_string(), artifacts, failed_stage })
    }
}

/// Removes the files a previous run listed, so nothing stale is left behind.
fn clear_previous(dir: &Path) -> Result<()> {
    let index = dir.join(INDEX_FILE);
    if let Ok(text) = fs::read_to_string(&index) {
        if let Ok(old) = serde_json::from_str::<ArtifactIndex>(&text) {
            for rel in old.artifacts.keys() {
                let _ = fs::remove_file(dir.join(rel));
            }
        }
        let _ = fs::remove_file(&index);
    }
    let _ = fs::remove_file(dir.join(PARTIAL_FILE));
    Ok(())
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    info!("stage {name}");
    f().map_err(|e| Error::Stage { stage: name.to_string(), source: Box::new(e) })
}

/// Runs `build` into a scratch directory next to `dir` and renames it into
/// place, so a cache entry is either complete or absent.
fn cached_dir(dir: &Path, build: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if dir.join("COMPLETE").is_file() {
        info!("cache hit {}", dir.display());
        return Ok(());
    }
    let tmp = dir.with_extension(format!("tmp{}", std::process::id()));
    let _ = fs::remove_dir_all(&tmp);
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    build(&tmp)?;
    fs::write(tmp.join("COMPLETE"), b"").map_err(|e| Error::io(&tmp, e))?;
    let _ = fs::remove_dir_all(dir);
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn cache_key(kind: &str, value: &serde_json::Value) -> String {
    let text = serde_json::json!({ "kind": kind, "version": CACHE_VERSION, "value": value }).to_string();
    sha256_hex(text.as_bytes())[..24].to_string()
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Short file-name-safe label for a data reference.
fn ref_label(s: &str) -> String {
    let base = match s.strip_prefix("toy:") {
        Some(name) => format!("toy-{name}"),
        None if s == "dip" => "dip".into(),
        None => {
            let stem = Path::new(s).file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_default();
            format!("{stem}-{}", &sha256_hex(s.as_bytes())[..8])
        }
    };
    file_safe(&base)
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || "-_".contains(c) { c } else { '_' }).collect()
}

struct Data<'a> {
    config: &'a ExperimentConfig,
    cache: &'a Path,
    manifests: BTreeMap<String, DatasetManifest>,
    dip: Vec<DipSummary>,
}

impl Data<'_> {
    fn get(&self, s: &str) -> &DatasetManifest {
        &self.manifests[s]
    }

    fn resolve(&mut self, s: &str) -> Result<()> {
        if self.manifests.contains_key(s) {
            return Ok(());
        }
        let m = match self.config.data_ref(s)? {
            DataRef::Toy(name) => {
                let entry = self.config.data.toy.iter().find(|t| t.name == name).expect("validated");
                let spec = entry.spec(self.config.seed);
                let dir = self.cache.join("toy").join(cache_key("toy", &serde_json::to_value(&spec)?));
                cached_dir(&dir, |tmp| synth_toy_corpus(&spec, tmp).map(|_| ()))?;
                load_manifest(&dir.join("manifest.jsonl"))?
            }
            DataRef::Manifest(p) => load_manifest(&p)?,
            DataRef::Dip => {
                let section = self.config.dip.as_ref().expect("validated");
                self.resolve(&section.data)?;
                let mut real = self.get(&section.data).clone();
                real.records.retain(|r| r.label == Label::Real);
                real.records.sort_by(|a, b| a.id.cmp(&b.id));
                if let Some(limit) = section.limit {
                    real.records.truncate(limit);
                }
                let key = cache_key(
                    "dip",
                    &serde_json::json!({
                        "data": real.fingerprint(),
                        "config": section.config,
                        "oversample_real": section.oversample_real,
                    }),
                );
                let dir = self.cache.join("dip").join(key);
                cached_dir(&dir, |tmp| {
                    let (_, summaries) = build_dip_dataset(&real, &section.config, tmp, section.oversample_real)?;
                    fs::write(tmp.join("summaries.json"), to_json(&summaries)?).map_err(|e| Error::io(tmp, e))
                })?;
                let text = fs::read_to_string(dir.join("summaries.json")).map_err(|e| Error::io(&dir, e))?;
                self.dip = serde_json::from_str(&text)?;
                load_manifest(&dir.join("manifest.jsonl"))?
            }
        };
        self.manifests.insert(s.to_string(), m);
        Ok(())
    }
}

fn referenced(config: &ExperimentConfig) -> Vec<String> {
    let mut refs = Vec::new();
    if let Some(t) = &config.train {
        refs.push(t.data.clone());
        refs.extend(t.val_data.clone());
    }
    refs.extend(config.eval.iter().map(|e| e.data.clone()));
    if let Some(c) = &config.calibration {
        refs.extend(c.data.clone());
    }
    refs.extend(config.robustness.iter().map(|r| r.data.clone()));
    if let Some(s) = &config.spectra {
        refs.extend(s.data.iter().cloned());
    }
    refs.extend(config.rank.as_ref().map(|r| r.data.clone()));
    refs.extend(config.dip.as_ref().map(|_| "dip".to_string()));
    refs
}

fn training_sets(section: &TrainSection, data: &Data, seed: u64) -> Result<(DatasetManifest, DatasetManifest)> {
    let base = data.get(&section.data);
    let filter = match &section.categories {
        Some(c) => CategoryFilter::only(c.iter().cloned()),
        None => CategoryFilter::All,
    };
    let sampled = if section.sample_fraction.is_some() || section.categories.is_some() {
        sample_split(base, &filter, section.sample_fraction.unwrap_or(1.0), seed)?
    } else {
        base.clone()
    };
    let train_set = sampled.only_split(Split::Train);
    let val_src = section.val_data.as_deref().map(|v| data.get(v)).unwrap_or(&sampled);
    let val_set = val_src.only_split(Split::Val);
    if train_set.records.is_empty() {
        return Err(Error::EmptySplit(format!("`{}` has no training records", section.data)));
    }
    if val_set.records.is_empty() {
        return Err(Error::EmptySplit("no validation records".into()));
    }
    Ok((train_set, val_set))
}

/// Trains (or loads from cache) the detector. Returns the checkpoint and
/// history as written into the bundle.
fn train_stage(config: &ExperimentConfig, data: &Data, w: &mut Writer) -> Result<(Checkpoint, Option<TrainHistory>)> {
    let section = config.train.as_ref().expect("caller checks");
    if let Some(path) = &section.checkpoint {
        let ck = Checkpoint::load(path)?;
        w.write("checkpoint.json", ck.to_json()?.as_bytes())?;
        return Ok((ck, None));
    }
    let (train_set, val_set) = training_sets(section, data, config.seed)?;
    let key = cache_key(
        "train",
        &serde_json::json!({
            "train": train_set.fingerprint(),
            "val": val_set.fingerprint(),
            "preset": section.preset,
            "backbone": section.backbone,
            "schedule": section.schedule,
            "seed": config.seed,
        }),
    );
    let dir = data.cache.join("train").join(key);
    cached_dir(&dir, |tmp| {
        let policy = AugmentationPolicy::preset(&section.preset)?;
        let model: DetectorModel<f32> = build_model(&section.backbone, config.seed)?;
        let (model, history) = train(model, &train_set, &val_set, &policy, &section.schedule, config.seed)?;
        let fp = TrainingFingerprint {
            policy_preset: section.preset.clone(),
            manifest_hash: train_set.fingerprint(),
            seed: config.seed,
            weight_decay: 0.0,
        };
        Checkpoint::from_model(&model, Some(section.schedule.clone()), Some(fp)).save(&tmp.join("checkpoint.json"))?;
        fs::write(tmp.join("history.json"), to_json(&history)?).map_err(|e| Error::io(tmp, e))
    })?;
    let ck = Checkpoint::load(&dir.join("checkpoint.json"))?;
    let history_bytes = fs::read(dir.join("history.json")).map_err(|e| Error::io(&dir, e))?;
    let history: TrainHistory = serde_json::from_slice(&history_bytes)?;
    w.write("checkpoint.json", ck.to_json()?.as_bytes())?;
    w.write("history.json", &history_bytes)?;
    Ok((ck, Some(history)))
}

fn calibration_stage(
    section: &CalibrationSection,
    model: &DetectorModel<f32>,
    data: &Data,
    seed: u64,
) -> Result<CalibrationResult> {
    let (real, fake) = match (&section.real_image, &section.fake_image, &section.data) {
        (Some(r), Some(f), _) => (
            (r.to_string_lossy().into_owned(), load_image(r)?),
            (f.to_string_lossy().into_owned(), load_image(f)?),
        ),
        (_, _, Some(d)) => {
            let m = data.get(d);
            let find = |label: Label, id: &Option<String>| -> Result<(String, image::RgbImage)> {
                let rec = match id {
                    Some(id) => m.records.iter().find(|r| &r.id == id && r.label == label),
                    None => m
                        .records
                        .iter()
                        .filter(|r| r.label == label && r.split == Split::Train)
                        .min_by(|a, b| a.id.cmp(&b.id)),
                };
                let rec = rec.ok_or_else(|| Error::Validation(format!("no {} calibration record in `{d}`", label.as_str())))?;
                Ok((rec.id.clone(), m.load(rec)?))
            };
            (find(Label::Real, &section.real_id)?, find(Label::Fake, &section.fake_id)?)
        }
        _ => unreachable!("validated"),
    };
    let mut rng = derived_stream(seed, &["calibration", &real.0, &fake.0]);
    two_shot_calibrate(model, (&real.0, &real.1), (&fake.0, &fake.1), section.n_crops, &mut rng)
}

fn spectra_stage(config: &ExperimentConfig, data: &Data, w: &mut Writer) -> Result<Vec<PathBuf>> {
    let section = config.spectra.as_ref().expect("caller checks");
    let mut written = Vec::new();
    for d in &section.data {
        let m = data.get(d);
        for source in m.sources.keys() {
            for &label in &section.labels {
                let recs: Vec<_> = m
                    .records
                    .iter()
                    .filter(|r| &r.source_id == source && r.label == label && section.split.is_none_or(|s| r.split == s))
                    .collect();
                if recs.is_empty() {
                    continue;
                }
                let load = |i: usize| {
                    let img = m.load(recs[i])?;
                    match section.crop {
                        Some(c) => center_crop(&img, c),
                        None => Ok(img),
                    }
                };
                let map: SpectrumMap<f64> = average_spectrum_from(recs.len(), load, section.n, config.seed, source)?;
                let stem = format!("spectra/{}_{}_{}", ref_label(d), file_safe(source), label.as_str());
                let (png, bin, side) = (
                    w.dir.join(format!("{stem}.png")),
                    w.dir.join(format!("{stem}.bin")),
                    w.dir.join(format!("{stem}.json")),
                );
                map.save_png(&png)?;
                map.save_raw(&bin, &side)?;
                info!("spectrum {stem}: half-band ratio {:.2}", map.half_band_peak_ratio());
                for p in [png, bin, side] {
                    w.adopt(p.clone());
                    written.push(p);
                }
            }
        }
    }
    Ok(written)
}

/// Validates the config, then runs data → train → evaluate → robustness →
/// spectra → rank, caching corpora, DIP sets and trained weights under
/// [`default_cache_root`].
pub fn run_experiment(config: &ExperimentConfig) -> Result<ReportBundle> {
    run_experiment_with_cache(config, &default_cache_root())
}

pub fn run_experiment_with_cache(config: &ExperimentConfig, cache_root: &Path) -> Result<ReportBundle> {
    config.validate()?;
    let fingerprint = config.fingerprint();
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    clear_previous(&dir)?;
    let mut w = Writer { dir: dir.clone(), files: BTreeSet::new() };
    let mut bundle = ReportBundle::new(&dir, fingerprint.clone());
    w.write(CONFIG_SNAPSHOT, &to_json(config)?)?;

    let mut current = "data";
    let result = run_stages(config, cache_root, &mut w, &mut bundle, &mut current);
    let failed = result.as_ref().err().map(|_| current.to_string());
    if let Err(e) = &result {
        warn!("stage {current} failed: {e}");
        w.write(PARTIAL_FILE, format!("stage {current} failed: {e}\n").as_bytes())?;
    }
    bundle.index = w.index(&fingerprint, failed)?;
    fs::write(dir.join(INDEX_FILE), to_json(&bundle.index)?).map_err(|e| Error::io(dir.join(INDEX_FILE), e))?;
    result.map(|_| bundle)
}

fn run_stages(
    config: &ExperimentConfig,
    cache_root: &Path,
    w: &mut Writer,
    bundle: &mut ReportBundle,
    current: &mut &'static str,
) -> Result<()> {
    let fp = bundle.config_fingerprint.clone();
    *current = "data";
    let mut data = Data { config, cache: cache_root, manifests: BTreeMap::new(), dip: Vec::new() };
    stage("data", || {
        for r in referenced(config) {
            data.resolve(&r)?;
        }
        if !data.dip.is_empty() {
            w.write("dip_summary.json", &to_json(&data.dip)?)?;
        }
        Ok(())
    })?;
    bundle.dip = data.dip.clone();

    let Some(_) = &config.train else { return Ok(()) };
    *current = "train";
    let (ck, history) = stage("train", || train_stage(config, &data, w))?;
    bundle.history = history;
    let mut model: DetectorModel<f32> = ck.to_model()?;
    let model_fp = ck.hash()?;

    *current = "evaluate";
    stage("evaluate", || {
        if let Some(section) = &config.calibration {
            let cal = calibration_stage(section, &model, &data, config.seed)?;
            model.calibration_bias = cal.bias as f32;
            w.write("calibration.json", &to_json(&cal)?)?;
            bundle.calibration = Some(cal);
        }
        for e in &config.eval {
            let opts = EvalOptions {
                resize_mode: e.resize_mode,
                calibration: bundle.calibration.clone(),
                config_fingerprint: fp.clone(),
            };
            let (report, _) = evaluate(&model, data.get(&e.data), &opts)?;
            let name = file_safe(&e.name);
            w.write(format!("eval/{name}.json"), report.to_json()?.as_bytes())?;
            w.write(format!("eval/{name}_pr.csv"), report.pr_csv().as_bytes())?;
            bundle.evaluations.insert(e.name.clone(), report);
        }
        Ok(())
    })?;

    *current = "robustness";
    stage("robustness", || {
        for r in &config.robustness {
            let curve = robustness_sweep(&model, data.get(&r.data), &r.grid()?, r.resize_mode, &model_fp)?;
            let (csv, png) = curve.export(&w.dir.join("robustness"))?;
            for p in [csv, png] {
                w.adopt(p.clone());
                bundle.robustness.push(p);
            }
        }
        Ok(())
    })?;

    *current = "spectra";
    if config.spectra.is_some() {
        bundle.spectra = stage("spectra", || spectra_stage(config, &data, w))?;
    }

    *current = "rank";
    if let Some(r) = &config.rank {
        stage("rank", || {
            let m = data.get(&r.data);
            let resize = config.eval.first().map(|e| e.resize_mode).unwrap_or_default();
            let gallery = rank_images(&model, m, &r.percentiles, r.combined, resize)?;
            for p in gallery.export(m, &w.dir.join("gallery"), model.spec.input_size)? {
                w.adopt(p);
            }
            bundle.gallery = Some(gallery);
            Ok(())
        })?;
    }
    Ok(())
}
