use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetManifest, Label};
use crate::detector::DetectorModel;
use crate::error::{Error, Result};
use crate::metrics::{score_records, test_records, ResizeMode, ScoreEntry};
use crate::scalar::Scalar;

/// Position `⌊p/100·(n−1)⌋` of percentile `p` in a list of `n` items.
pub fn percentile_rank(p: f64, n: usize) -> usize {
    assert!(n > 0, "percentile of an empty list");
    ((p / 100.0 * (n - 1) as f64).floor() as usize).min(n - 1)
}

/// Sorts ascending by `(score, id)` and picks one index per percentile.
/// Returns `(percentile, rank, index into entries)`.
pub fn select_percentiles<T: Scalar>(entries: &[&ScoreEntry<T>], percentiles: &[f64]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| {
        entries[a].score.partial_cmp(&entries[b].score).expect("finite scores").then_with(|| entries[a].id.cmp(&entries[b].id))
    });
    percentiles
        .iter()
        .map(|&p| {
            let rank = percentile_rank(p, order.len());
            (p, rank, order[rank])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub percentile: f64,
    pub rank: usize,
    pub id: String,
    pub label: Label,
    pub score: f64,
    /// Image file, as stored in the manifest.
    pub source_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gallery {
    pub percentiles: Vec<f64>,
    /// Fake images per source, in percentile order.
    pub per_source: BTreeMap<String, Vec<GalleryEntry>>,
    /// Real and fake images ranked together per source, if requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combined: Option<BTreeMap<String, Vec<GalleryEntry>>>,
    pub warnings: Vec<String>,
}

fn pick<T: Scalar>(
    manifest: &DatasetManifest,
    entries: &[&ScoreEntry<T>],
    percentiles: &[f64],
) -> Vec<GalleryEntry> {
    let paths: BTreeMap<&str, &Path> = manifest.records.iter().map(|r| (r.id.as_str(), r.path.as_path())).collect();
    select_percentiles(entries, percentiles)
        .into_iter()
        .map(|(percentile, rank, i)| {
            let e = entries[i];
            GalleryEntry {
                percentile,
                rank,
                id: e.id.clone(),
                label: e.label,
                score: e.score.as_f64(),
                source_path: paths[e.id.as_str()].to_path_buf(),
            }
        })
        .collect()
}

/// Ranks the test images of every source by fakeness logit.
pub fn rank_images<T: Scalar>(
    model: &DetectorModel<T>,
    manifest: &DatasetManifest,
    percentiles: &[f64],
    combined: bool,
    resize: ResizeMode,
) -> Result<Gallery> {
    let records = test_records(manifest);
    if records.is_empty() {
        return Err(Error::EmptySplit("manifest has no test records to rank".into()));
    }
    let scores = score_records(model, manifest, &records, resize, None)?;
    let mut per_source = BTreeMap::new();
    let mut both = BTreeMap::new();
    let mut warnings = Vec::new();
    for source in manifest.sources.keys() {
        let all: Vec<&ScoreEntry<T>> = scores.entries().iter().filter(|e| &e.source_id == source).collect();
        let fakes: Vec<&ScoreEntry<T>> = all.iter().copied().filter(|e| e.label.is_fake()).collect();
        if fakes.is_empty() {
            let w = format!("source `{source}` has no fake test images; omitted from the gallery");
            warn!("{w}");
            warnings.push(w);
        } else {
            per_source.insert(source.clone(), pick(manifest, &fakes, percentiles));
        }
        if combined && !all.is_empty() {
            both.insert(source.clone(), pick(manifest, &all, percentiles));
        }
    }
    Ok(Gallery { percentiles: percentiles.to_vec(), per_source, combined: combined.then_some(both), warnings })
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || "-_".contains(c) { c } else { '_' }).collect()
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl Gallery {
    /// Writes `gallery.json`, `index.html` and one PNG per selected image
    /// (center-cropped to `crop`) into `dir`. Returns every written path.
    pub fn export(&self, manifest: &DatasetManifest, dir: &Path, crop: u32) -> Result<Vec<PathBuf>> {
        let img_dir = dir.join("images");
        fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        let mut written = Vec::new();
        let mut html = String::from("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>fakeness ranking</title></head><body>\n");
        let by_id: BTreeMap<&str, _> = manifest.records.iter().map(|r| (r.id.as_str(), r)).collect();
        let sections: Vec<(&str, &BTreeMap<String, Vec<GalleryEntry>>)> =
            std::iter::once(("fake", &self.per_source)).chain(self.combined.as_ref().map(|c| ("combined", c))).collect();
        for (kind, groups) in sections {
            for (source, entries) in groups {
                html.push_str(&format!("<h2>{} ({kind})</h2>\n<table><tr>\n", html_escape(source)));
                for e in entries {
                    let name = format!("{kind}_{}_p{:03}.png", file_safe(source), e.percentile.round() as i64);
                    let path = img_dir.join(&name);
                    let img = manifest.load(by_id[e.id.as_str()])?;
                    let side = crop.min(img.width()).min(img.height());
                    let thumb = crate::corpus::center_crop(&img, side)?;
                    thumb
                        .save_with_format(&path, image::ImageFormat::Png)
                        .map_err(|err| Error::ImageEncode(format!("{}: {err}", path.display())))?;
                    written.push(path);
                    html.push_str(&format!(
                        "<td><img src=\"images/{name}\" width=\"{side}\"><br>p{} rank {} {} {} logit {:.4}</td>\n",
                        e.percentile,
                        e.rank,
                        html_escape(&e.id),
                        e.label.as_str(),
                        e.score
                    ));
                }
                html.push_str("</tr></table>\n");
            }
        }
        html.push_str("</body></html>\n");
        let index = dir.join("index.html");
        fs::write(&index, html).map_err(|e| Error::io(&index, e))?;
        let json = dir.join("gallery.json");
        fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        written.push(index);
        written.push(json);
        Ok(written)
    }
}
