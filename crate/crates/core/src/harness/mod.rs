//! Experiment configuration, orchestration and report bundles.

pub mod config;
pub mod rank;
pub mod run;

pub use config::{ExperimentConfig, DataRef};
pub use rank::{percentile_rank, rank_images, select_percentiles, Gallery, GalleryEntry};
pub use run::{default_cache_root, run_experiment, run_experiment_with_cache, ArtifactIndex, ReportBundle, CACHE_ENV};
