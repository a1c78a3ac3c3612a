use std::fs;
use std::path::Path;

use cnndetect::corpus::{synth_toy_corpus, ToyKind, ToySpec};
use cnndetect::harness::{run_experiment_with_cache, ExperimentConfig};
use cnndetect::Error;

fn smoke(out: &Path) -> String {
    format!(
        r#"
        seed = 11
        output_dir = "{}"

        [[data.toy]]
        name = "near"
        kind = "decoder_nearest"
        n = 8
        size = 224
        train = 0.5
        val = 0.25

        [train]
        data = "toy:near"
        preset = "blur_jpeg_05"
        backbone = {{ architecture_id = "tiny_cnn", pretrained = false, input_size = 224 }}
        schedule = {{ lr_initial = 1e-3, batch_size = 4, max_epochs = 2 }}

        [[eval]]
        name = "near"
        data = "toy:near"

        [rank]
        data = "toy:near"
        "#,
        out.display()
    )
}

#[test]
fn minimal_run_writes_one_report_and_an_index() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(&smoke(&tmp.path().join("out"))).unwrap();
    let bundle = run_experiment_with_cache(&cfg, &tmp.path().join("cache")).unwrap();
    assert_eq!(bundle.evaluations.len(), 1);
    assert!(bundle.history.is_some());
    assert!(!bundle.dir.join("PARTIAL").exists());

    // Every file under the bundle is in the index, and the hashes hold.
    let mut on_disk = Vec::new();
    let mut stack = vec![bundle.dir.clone()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                on_disk.push(p.strip_prefix(&bundle.dir).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    on_disk.retain(|p| p != "index.json");
    on_disk.sort();
    let indexed: Vec<String> = bundle.index.artifacts.keys().cloned().collect();
    assert_eq!(on_disk, indexed);
    assert!(bundle.verify().unwrap().is_empty());

    // The snapshot alone reproduces the run.
    let snap = ExperimentConfig::load(&bundle.dir.join("config.resolved.json")).unwrap();
    assert_eq!(snap, cfg);
}

#[test]
fn rerun_over_a_bundle_is_an_exact_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(&smoke(&tmp.path().join("out"))).unwrap();
    let first = run_experiment_with_cache(&cfg, &tmp.path().join("cache")).unwrap();
    let second = run_experiment_with_cache(&cfg, &tmp.path().join("cache")).unwrap();
    assert_eq!(first.index, second.index);
}

#[test]
fn unknown_preset_is_rejected_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = ExperimentConfig::parse(&smoke(&out).replace("blur_jpeg_05", "cutmix")).unwrap();
    let err = run_experiment_with_cache(&cfg, &tmp.path().join("cache")).unwrap_err();
    assert!(matches!(err, Error::UnknownPreset(_)));
    assert!(err.is_validation());
    assert!(!out.exists());
    assert!(!tmp.path().join("cache").exists());
}

#[test]
fn stage_failure_leaves_a_partial_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_toy_corpus(&ToySpec::new(ToyKind::DecoderNearest, 4, 224, 0).with_splits(0.5, 0.25), &data).unwrap();
    // The manifest stays valid but one training image disappears.
    fs::remove_file(data.join("fake/f00000.png")).unwrap();
    let out = tmp.path().join("out");
    let text = smoke(&out).replace("\"toy:near\"", &format!("\"{}\"", data.join("manifest.jsonl").display()));
    let cfg = ExperimentConfig::parse(&text).unwrap();
    let err = run_experiment_with_cache(&cfg, &tmp.path().join("cache")).unwrap_err();
    match &err {
        Error::Stage { stage, .. } => assert_eq!(stage, "train"),
        other => panic!("expected a stage error, got {other}"),
    }
    assert!(!err.is_validation());
    let marker = fs::read_to_string(out.join("PARTIAL")).unwrap();
    assert!(marker.contains("train"), "{marker}");
    let index: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("index.json")).unwrap()).unwrap();
    assert_eq!(index["failed_stage"], "train");
}
