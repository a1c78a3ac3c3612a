//! Labeled image collections: manifests, per-source preprocessing, cropping,
//! stratified subsetting and the synthetic toy corpus.

mod manifest;
mod preprocess;
mod sample;
mod toy;

pub use manifest::{
    build_manifest_from_tree, load_manifest, DatasetManifest, ImageRecord, Label, Split,
};
pub use preprocess::{
    center_crop, crop, load_image, preprocess_image, resize_bilinear, resize_short_side, CropMode, PreprocessMode,
    PreprocessRule,
};
pub use sample::{sample_split, CategoryFilter};
pub use toy::{dead_leaves, synth_toy_corpus, ToyDecoder, ToyKind, ToySpec};
