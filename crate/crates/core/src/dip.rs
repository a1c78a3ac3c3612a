//! Deep-image-prior fakes: per-image reconstructions through an untrained
//! upsampling-convolutional generator, snapshotted during optimization.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use log::info;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetManifest, ImageRecord, Label, PreprocessRule};
use crate::error::{Error, Result};
use crate::nn::{fill_normal, Adam, Conv2d, Layer, Padding, Sequential, UpsampleMode};
use crate::rng::{derive_seed, sha256_hex, stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DipConfig {
    /// Number of 2× upsampling stages; the noise input has side `size / 2^stages`.
    pub stages: usize,
    /// Channels of the noise input and every hidden layer.
    pub width: usize,
    pub lr_stages: Vec<f64>,
    pub iters_per_stage: usize,
    pub snapshot_iters: Vec<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Stop after this many updates (for replaying a run up to a snapshot).
    pub stop_after: Option<usize>,
}

impl Default for DipConfig {
    fn default() -> Self {
        DipConfig {
            stages: 3,
            width: 16,
            lr_stages: vec![0.01, 0.001, 0.0001],
            iters_per_stage: 2000,
            snapshot_iters: vec![1000, 2000, 3000, 4000, 5000, 6000],
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            stop_after: None,
        }
    }
}

impl DipConfig {
    pub fn total_iters(&self) -> usize {
        self.lr_stages.len() * self.iters_per_stage
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.stages == 0 || self.width == 0 || self.iters_per_stage == 0 || self.lr_stages.is_empty() {
            return bad("DIP stages, width, iterations and learning rates must be nonempty".into());
        }
        if self.lr_stages.windows(2).any(|w| w[1] >= w[0]) || self.lr_stages.iter().any(|&l| !(l > 0.0)) {
            return bad(format!("DIP learning rates {:?} must be positive and strictly decreasing", self.lr_stages));
        }
        let total = self.total_iters();
        if self.snapshot_iters.iter().any(|&k| k == 0 || k > total) {
            return bad(format!("snapshot iterations {:?} must lie in 1..={total}", self.snapshot_iters));
        }
        Ok(())
    }

    fn build_net(&self, rng: &mut crate::rng::Stream) -> Sequential<f32> {
        let mut layers = Vec::new();
        for _ in 0..self.stages {
            layers.push(Layer::Upsample { factor: 2, mode: UpsampleMode::Nearest });
            layers.push(Layer::Conv(Conv2d::zeros(self.width, self.width, 3, 1, 1, Padding::Reflect)));
            layers.push(Layer::LeakyRelu(0.2));
        }
        layers.push(Layer::Conv(Conv2d::zeros(self.width, 3, 3, 1, 1, Padding::Reflect)));
        layers.push(Layer::Sigmoid);
        let mut net = Sequential::new(layers);
        net.init_he(rng);
        net
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DipResult {
    pub target_id: String,
    /// Reconstruction after `k` updates, rounded to 8 bits.
    pub snapshots: BTreeMap<usize, RgbImage>,
    /// Mean absolute error (fraction of the 8-bit range) of the output that
    /// each update starts from; entry 0 is the untrained network's loss.
    pub loss_trace: Vec<f64>,
    /// Loss of the output after the last update.
    pub final_loss: f64,
}

fn l1_and_grad(out: &Tensor<f32>, target: &Tensor<f32>) -> (f64, Tensor<f32>) {
    let n = out.data.len() as f32;
    let mut g = Tensor::zeros(out.c, out.h, out.w);
    let mut sum = 0.0f64;
    for ((gv, &o), &t) in g.data.iter_mut().zip(&out.data).zip(&target.data) {
        let d = o - t;
        sum += d.abs() as f64;
        *gv = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    (sum / out.data.len() as f64, g)
}

/// Fits a freshly initialized generator (seeded by `config.seed` and the target
/// id) to `target` under the ℓ1 loss with the staged learning rates.
pub fn reconstruct_dip(target_id: &str, target: &RgbImage, config: &DipConfig) -> Result<DipResult> {
    config.validate()?;
    let f = 1usize << config.stages;
    let (w, h) = (target.width() as usize, target.height() as usize);
    if w % f != 0 || h % f != 0 || w == 0 || h == 0 {
        return Err(Error::ShapeMismatch {
            expected: format!("target sides divisible by {f}"),
            got: format!("{w}x{h}"),
        });
    }
    let mut rng = stream(derive_seed(config.seed, &["dip", target_id]));
    let mut net = config.build_net(&mut rng);
    let mut z = Tensor::zeros(config.width, h / f, w / f);
    fill_normal(&mut z.data, &mut rng, 1.0);
    let goal: Tensor<f32> = Tensor::from_rgb_unit(target);

    let shapes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(config.beta1, config.beta2, &shapes);
    let total = config.stop_after.map_or(config.total_iters(), |s| s.min(config.total_iters()));
    let mut loss_trace = Vec::with_capacity(total);
    let mut snapshots = BTreeMap::new();
    for it in 1..=total {
        let lr = config.lr_stages[(it - 1) / config.iters_per_stage];
        let (out, caches) = net.forward_train(&z);
        let (loss, g) = l1_and_grad(&out, &goal);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("DIP target `{target_id}` at iteration {it}; trace so far {loss_trace:?}")));
        }
        loss_trace.push(loss);
        let mut grads = net.zero_grads();
        net.backward(caches, g, &mut grads, false);
        adam.step(net.params_mut(), &grads, lr as f32);
        if config.snapshot_iters.contains(&it) {
            snapshots.insert(it, net.forward(&z).to_rgb_unit());
        }
    }
    let final_loss = l1_and_grad(&net.forward(&z), &goal).0;
    Ok(DipResult { target_id: target_id.to_string(), snapshots, loss_trace, final_loss })
}

/// File-system-safe directory name for a record id.
fn dir_name(id: &str) -> String {
    let clean: String = id.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect();
    if clean == id {
        clean
    } else {
        format!("{clean}-{}", &sha256_hex(id.as_bytes())[..8])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipSummary {
    pub target_id: String,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub snapshots: Vec<usize>,
}

fn write_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::ImageEncode(format!("{}: {e}", path.display())))
}

/// Reconstructs every real record of `real` and writes
/// `<out>/<target>/iter_<k>.png`, `target.png` and `loss.csv`. The manifest
/// (saved as `<out>/manifest.jsonl`) has one fake per (target, snapshot) and
/// each target repeated `oversample_real` times as real, under source `dip`.
pub fn build_dip_dataset(
    real: &DatasetManifest,
    config: &DipConfig,
    out_dir: &Path,
    oversample_real: usize,
) -> Result<(DatasetManifest, Vec<DipSummary>)> {
    config.validate()?;
    let targets: Vec<&ImageRecord> = real.records.iter().filter(|r| r.label == Label::Real).collect();
    if targets.is_empty() {
        return Err(Error::EmptySplit("DIP needs at least one real image".into()));
    }
    let mut manifest = DatasetManifest::empty(out_dir);
    manifest.sources.insert("dip".into(), PreprocessRule::keep());
    manifest.balanced = oversample_real == config.snapshot_iters.len();
    manifest.metadata = serde_json::json!({ "dip": config, "oversample_real": oversample_real });
    let mut summaries = Vec::new();
    for r in targets {
        let img = real.load(r)?;
        let res = reconstruct_dip(&r.id, &img, config)?;
        let dir = PathBuf::from(dir_name(&r.id));
        let abs = out_dir.join(&dir);
        fs::create_dir_all(&abs).map_err(|e| Error::io(&abs, e))?;
        write_png(&img, &abs.join("target.png"))?;
        let mut csv = String::from("iteration,l1\n");
        for (i, l) in res.loss_trace.iter().enumerate() {
            csv.push_str(&format!("{},{l}\n", i + 1));
        }
        fs::write(abs.join("loss.csv"), csv).map_err(|e| Error::io(abs.join("loss.csv"), e))?;
        for (k, snap) in &res.snapshots {
            let rel = dir.join(format!("iter_{k}.png"));
            write_png(snap, &out_dir.join(&rel))?;
            manifest.records.push(ImageRecord {
                id: format!("{}@{k}", r.id),
                path: rel,
                label: Label::Fake,
                source_id: "dip".into(),
                category: r.category.clone(),
                split: r.split,
            });
        }
        for k in 1..=oversample_real {
            manifest.records.push(ImageRecord {
                id: format!("{}#rep{k}", r.id),
                path: dir.join("target.png"),
                label: Label::Real,
                source_id: "dip".into(),
                category: r.category.clone(),
                split: r.split,
            });
        }
        info!("dip target {}: l1 {:.4} -> {:.4}", r.id, res.loss_trace[0], res.final_loss);
        summaries.push(DipSummary {
            target_id: r.id.clone(),
            initial_loss: res.loss_trace[0],
            final_loss: res.final_loss,
            snapshots: res.snapshots.keys().copied().collect(),
        });
    }
    manifest.validate()?;
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok((manifest, summaries))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short() -> DipConfig {
        DipConfig { width: 8, iters_per_stage: 40, snapshot_iters: vec![20, 40, 60, 80, 100, 120], ..DipConfig::default() }
    }

    fn gradient_target() -> RgbImage {
        RgbImage::from_fn(16, 16, |x, y| image::Rgb([(x * 16) as u8, (y * 16) as u8, 128]))
    }

    #[test]
    fn config_validation() {
        DipConfig::default().validate().unwrap();
        assert_eq!(DipConfig::default().total_iters(), 6000);
        let mut c = DipConfig::default();
        c.lr_stages = vec![0.01, 0.01];
        assert!(c.validate().is_err());
        let mut c = DipConfig::default();
        c.snapshot_iters.push(6001);
        assert!(c.validate().is_err());
    }

    #[test]
    fn snapshots_replay_bit_for_bit() {
        let cfg = short();
        let full = reconstruct_dip("t", &gradient_target(), &cfg).unwrap();
        assert_eq!(full.snapshots.len(), 6);
        assert_eq!(full.loss_trace.len(), 120);
        let part = reconstruct_dip("t", &gradient_target(), &DipConfig { stop_after: Some(60), ..cfg }).unwrap();
        assert_eq!(part.snapshots[&60], full.snapshots[&60]);
        assert_eq!(part.loss_trace[..], full.loss_trace[..60]);
    }

    #[test]
    fn target_id_seeds_the_network() {
        let a = reconstruct_dip("a", &gradient_target(), &short()).unwrap();
        let b = reconstruct_dip("b", &gradient_target(), &short()).unwrap();
        assert_ne!(a.loss_trace[0], b.loss_trace[0]);
    }

    #[test]
    fn mismatched_target_is_rejected() {
        let img = RgbImage::new(20, 16);
        assert!(reconstruct_dip("t", &img, &short()).is_err());
    }

    #[test]
    fn dir_names_are_safe() {
        assert_eq!(dir_name("abc_01"), "abc_01");
        let d = dir_name("a/b");
        assert!(d.starts_with("a_b-") && !d.contains('/'));
    }
}
