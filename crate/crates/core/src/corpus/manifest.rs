use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::preprocess::{load_image, preprocess_image, PreprocessRule};
use crate::error::{Error, Result};
use crate::rng::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn is_fake(self) -> bool {
        self == Label::Fake
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub id: String,
    /// Relative to the manifest directory (absolute paths are kept as-is).
    pub path: PathBuf,
    pub label: Label,
    pub source_id: String,
    pub category: String,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    sources: BTreeMap<String, PreprocessRule>,
    #[serde(default)]
    balanced: bool,
    #[serde(default)]
    metadata: serde_json::Value,
}

/// A validated set of records plus the preprocessing rule of every source.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
    pub sources: BTreeMap<String, PreprocessRule>,
    /// Every `(source_id, split)` group has as many real as fake records.
    pub balanced: bool,
    pub metadata: serde_json::Value,
    /// Directory that relative record paths resolve against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn empty(root: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            records: Vec::new(),
            sources: BTreeMap::new(),
            balanced: false,
            metadata: serde_json::Value::Null,
            root: root.into(),
        }
    }

    pub fn resolve(&self, record: &ImageRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    pub fn rule(&self, source_id: &str) -> PreprocessRule {
        self.sources[source_id]
    }

    /// Decodes a record's image and applies its source's preprocessing rule.
    pub fn load(&self, record: &ImageRecord) -> Result<image::RgbImage> {
        let img = load_image(&self.resolve(record))?;
        Ok(preprocess_image(&img, self.rule(&record.source_id)))
    }

    /// Checks every type invariant; errors name the offending record/group.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !self.sources.contains_key(&r.source_id) {
                return Err(Error::Validation(format!(
                    "record `{}` references unknown source_id `{}`",
                    r.id, r.source_id
                )));
            }
            if !seen.insert((r.source_id.as_str(), r.id.as_str())) {
                return Err(Error::Validation(format!(
                    "duplicate record id `{}` in source `{}`",
                    r.id, r.source_id
                )));
            }
        }
        for (name, rule) in &self.sources {
            rule.validate()
                .map_err(|e| Error::Validation(format!("source `{name}`: {e}")))?;
        }
        if self.balanced {
            for ((source, split), (real, fake)) in self.group_counts() {
                if real != fake {
                    return Err(Error::Validation(format!(
                        "group (source `{source}`, split `{split}`) is flagged balanced but has {real} real and {fake} fake records"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `(real, fake)` counts per `(source_id, split)`.
    pub fn group_counts(&self) -> BTreeMap<(String, Split), (usize, usize)> {
        let mut counts: BTreeMap<(String, Split), (usize, usize)> = BTreeMap::new();
        for r in &self.records {
            let e = counts.entry((r.source_id.clone(), r.split)).or_default();
            match r.label {
                Label::Real => e.0 += 1,
                Label::Fake => e.1 += 1,
            }
        }
        counts
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Copy restricted to one split.
    pub fn only_split(&self, split: Split) -> DatasetManifest {
        DatasetManifest {
            records: self.split(split).cloned().collect(),
            ..self.clone()
        }
    }

    /// Line-delimited JSON: header object first, then one record per line.
    pub fn to_jsonl(&self) -> String {
        let header = Header {
            sources: self.sources.clone(),
            balanced: self.balanced,
            metadata: self.metadata.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Content hash of the serialized manifest.
    pub fn fingerprint(&self) -> String {
        sha256_hex(self.to_jsonl().as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    /// Rewrites record paths so they resolve from `new_root`.
    pub fn rebase(&self, new_root: &Path) -> DatasetManifest {
        let records = self
            .records
            .iter()
            .map(|r| ImageRecord {
                path: relative_to(&self.resolve(r), new_root),
                ..r.clone()
            })
            .collect();
        DatasetManifest {
            records,
            root: new_root.to_path_buf(),
            ..self.clone()
        }
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let Some((hline, htext)) = lines.next() else {
            return Err(Error::Parse { line: 1, msg: "missing header line".into() });
        };
        let header: Header = serde_json::from_str(htext).map_err(|e| Error::Parse {
            line: hline + 1,
            msg: format!("header: {e}"),
        })?;
        let mut records = Vec::new();
        for (i, line) in lines {
            let rec: ImageRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            records.push(rec);
        }
        let m = DatasetManifest {
            records,
            sources: header.sources,
            balanced: header.balanced,
            metadata: header.metadata,
            root: root.into(),
        };
        m.validate()?;
        Ok(m)
    }
}

/// Best-effort relative path; falls back to the absolute path.
pub(crate) fn relative_to(path: &Path, base: &Path) -> PathBuf {
    let abs = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let (p, b) = (abs(path), abs(base));
    let pc: Vec<_> = p.components().collect();
    let bc: Vec<_> = b.components().collect();
    let common = pc.iter().zip(&bc).take_while(|(a, b)| a == b).count();
    if common == 0 {
        return p;
    }
    let mut out = PathBuf::new();
    for _ in common..bc.len() {
        out.push("..");
    }
    for c in &pc[common..] {
        out.push(c.as_os_str());
    }
    out
}

/// Reads and validates a manifest file.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    DatasetManifest::parse(&text, root)
}

/// Indexes a directory tree laid out as
/// `<root>/<source_id>/[<category>/]{0_real,1_fake}/<image>`.
pub fn build_manifest_from_tree(
    root: &Path,
    rules: &BTreeMap<String, PreprocessRule>,
    default_rule: PreprocessRule,
    split: Split,
) -> Result<DatasetManifest> {
    let mut manifest = DatasetManifest::empty(root);
    for source in sorted_dirs(root)? {
        let source_id = file_name(&source);
        let class_dirs = ["0_real", "1_fake"];
        let has_direct = class_dirs.iter().any(|d| source.join(d).is_dir());
        let categories: Vec<(String, PathBuf)> = if has_direct {
            vec![(source_id.clone(), source.clone())]
        } else {
            sorted_dirs(&source)?.into_iter().map(|p| (file_name(&p), p)).collect()
        };
        let mut any = false;
        for (category, dir) in categories {
            for (label, sub) in [(Label::Real, "0_real"), (Label::Fake, "1_fake")] {
                let d = dir.join(sub);
                if !d.is_dir() {
                    continue;
                }
                for file in sorted_files(&d)? {
                    let stem = file_name(&file);
                    let rel = relative_to(&file, root);
                    manifest.records.push(ImageRecord {
                        id: format!("{category}/{}/{stem}", label.as_str()),
                        path: rel,
                        label,
                        source_id: source_id.clone(),
                        category: category.clone(),
                        split,
                    });
                    any = true;
                }
            }
        }
        if any {
            let rule = rules.get(&source_id).copied().unwrap_or(default_rule);
            manifest.sources.insert(source_id, rule);
        }
    }
    manifest.balanced = manifest.group_counts().values().all(|(r, f)| r == f);
    manifest.validate()?;
    Ok(manifest)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    v.sort();
    Ok(v)
}

fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .map(|x| matches!(x.to_string_lossy().to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
                    .unwrap_or(false)
        })
        .collect();
    v.sort();
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PreprocessMode;

    const HEADER: &str = r#"{"sources":{"toy":{"mode":"keep","target":256}},"balanced":true,"metadata":{"note":"t"}}"#;

    fn rec(id: &str, label: &str) -> String {
        format!(r#"{{"id":"{id}","path":"{id}.png","label":"{label}","source_id":"toy","category":"c","split":"train"}}"#)
    }

    #[test]
    fn empty_manifest_is_valid() {
        let m = DatasetManifest::parse(r#"{"sources":{}}"#, ".").unwrap();
        assert!(m.records.is_empty() && m.sources.is_empty());
    }

    #[test]
    fn balanced_manifest_loads() {
        let text = [HEADER.to_string(), rec("a", "real"), rec("b", "real"), rec("c", "fake"), rec("d", "fake")].join("\n");
        let m = DatasetManifest::parse(&text, "/data").unwrap();
        assert_eq!(m.records.len(), 4);
        assert_eq!(m.resolve(&m.records[0]), PathBuf::from("/data/a.png"));
        assert_eq!(m.rule("toy").mode, PreprocessMode::Keep);
    }

    #[test]
    fn imbalance_names_the_group() {
        let lines = [
            HEADER.to_string(),
            rec("a", "real"),
            rec("b", "real"),
            rec("e", "real"),
            rec("c", "fake"),
            rec("d", "fake"),
        ];
        // Counting oracle: 3 real vs 2 fake in (toy, train).
        let reals = lines.iter().filter(|l| l.contains(r#""label":"real""#)).count();
        let fakes = lines.iter().filter(|l| l.contains(r#""label":"fake""#)).count();
        assert_ne!(reals, fakes);
        let err = DatasetManifest::parse(&lines.join("\n"), ".").unwrap_err().to_string();
        assert!(err.contains("source `toy`") && err.contains("split `train`"), "{err}");
        assert!(err.contains("3 real") && err.contains("2 fake"), "{err}");
    }

    #[test]
    fn unknown_source_and_duplicates_are_rejected() {
        let bad_src = format!("{HEADER}\n{}", rec("a", "real").replace(r#""source_id":"toy""#, r#""source_id":"nope""#));
        let err = DatasetManifest::parse(&bad_src, ".").unwrap_err().to_string();
        assert!(err.contains("`a`") && err.contains("nope"), "{err}");

        let dup = [HEADER.to_string(), rec("a", "real"), rec("a", "fake")].join("\n");
        let err = DatasetManifest::parse(&dup, ".").unwrap_err().to_string();
        assert!(err.contains("duplicate record id `a`"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{HEADER}\n{}\n{{\"id\": 3}}", rec("a", "real"));
        match DatasetManifest::parse(&text, ".") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_label = format!("{HEADER}\n{}", rec("a", "maybe"));
        assert!(matches!(DatasetManifest::parse(&bad_label, "."), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn serialization_round_trips() {
        let text = [HEADER.to_string(), rec("a", "real"), rec("c", "fake")].join("\n");
        let m = DatasetManifest::parse(&text, ".").unwrap();
        let again = DatasetManifest::parse(&m.to_jsonl(), ".").unwrap();
        assert_eq!(m, again);
        assert_eq!(m.fingerprint(), again.fingerprint());
    }

    #[test]
    fn tree_layout_is_indexed() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::RgbImage::new(4, 4);
        for (cat, class) in [("cat", "0_real"), ("cat", "1_fake"), ("dog", "0_real"), ("dog", "1_fake")] {
            let d = dir.path().join("progan").join(cat).join(class);
            fs::create_dir_all(&d).unwrap();
            img.save(d.join("x.png")).unwrap();
        }
        let d = dir.path().join("san").join("1_fake");
        fs::create_dir_all(&d).unwrap();
        img.save(d.join("y.png")).unwrap();
        let m = build_manifest_from_tree(dir.path(), &BTreeMap::new(), PreprocessRule::keep(), Split::Test).unwrap();
        assert_eq!(m.records.len(), 5);
        assert!(!m.balanced);
        let cats: BTreeSet<_> = m.records.iter().map(|r| (r.source_id.as_str(), r.category.as_str())).collect();
        assert!(cats.contains(&("progan", "dog")) && cats.contains(&("san", "san")));
        assert!(m.resolve(&m.records[0]).exists());
    }
}
