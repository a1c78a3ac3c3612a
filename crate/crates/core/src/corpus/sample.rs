use std::collections::{BTreeMap, BTreeSet};

use super::manifest::{DatasetManifest, Label, Split};
use crate::error::{Error, Result};
use crate::rng::hash_unit;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CategoryFilter {
    All,
    Only(BTreeSet<String>),
}

impl CategoryFilter {
    pub fn only<I: IntoIterator<Item = S>, S: Into<String>>(cats: I) -> Self {
        CategoryFilter::Only(cats.into_iter().map(Into::into).collect())
    }

    fn admits(&self, category: &str) -> bool {
        match self {
            CategoryFilter::All => true,
            CategoryFilter::Only(set) => set.contains(category),
        }
    }
}

/// Keeps the records of the selected categories, then a seeded fraction of
/// every `(source, label, category, split)` group.
///
/// Each record draws a key `u ∈ [0, 1)` from `(seed, source, id)` and is
/// kept iff `u < fraction`, which makes the operation idempotent and the
/// identity at `fraction = 1`. For balanced manifests the larger label of
/// each `(source, split)` group is then trimmed, highest keys first, until
/// both labels have the same count.
pub fn sample_split(
    manifest: &DatasetManifest,
    categories: &CategoryFilter,
    fraction: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} is outside (0, 1]")));
    }
    if let CategoryFilter::Only(set) = categories {
        if set.is_empty() {
            return Err(Error::InvalidArgument("category set is empty".into()));
        }
    }
    let key = |source: &str, id: &str| hash_unit(seed, &["sample", source, id]);

    let mut keep: Vec<bool> = manifest
        .records
        .iter()
        .map(|r| categories.admits(&r.category) && key(&r.source_id, &r.id) < fraction)
        .collect();

    if manifest.balanced {
        // (source, split) -> label -> [(key, index)]
        let mut groups: BTreeMap<(&str, Split), BTreeMap<Label, Vec<(f64, usize)>>> = BTreeMap::new();
        for (i, r) in manifest.records.iter().enumerate() {
            if keep[i] {
                groups
                    .entry((r.source_id.as_str(), r.split))
                    .or_default()
                    .entry(r.label)
                    .or_default()
                    .push((key(&r.source_id, &r.id), i));
            }
        }
        for labels in groups.values_mut() {
            let n_real = labels.get(&Label::Real).map_or(0, Vec::len);
            let n_fake = labels.get(&Label::Fake).map_or(0, Vec::len);
            let target = n_real.min(n_fake);
            for members in labels.values_mut() {
                members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for &(_, i) in &members[target..] {
                    keep[i] = false;
                }
            }
        }
    }

    let records: Vec<_> = manifest
        .records
        .iter()
        .zip(&keep)
        .filter_map(|(r, &k)| k.then(|| r.clone()))
        .collect();

    let had_train = manifest.records.iter().any(|r| r.split == Split::Train);
    if had_train && !records.iter().any(|r| r.split == Split::Train) {
        return Err(Error::EmptySplit("sampling left no training records".into()));
    }
    Ok(DatasetManifest { records, ..manifest.clone() })
}
