use std::process::Command;

fn cnndetect(args: &[&str], cache: &std::path::Path) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_cnndetect"))
        .args(args)
        .env("CNNDETECT_CACHE", cache)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned())
}

#[test]
fn exit_codes_follow_the_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let toy = t.join("toy");
    let (code, _) = cnndetect(
        &["data", "toy", "--kind", "decoder_nearest", "--n", "4", "--size", "224", "--train", "0.5", "--val", "0.25", "--out", toy.to_str().unwrap()],
        t,
    );
    assert_eq!(code, 0);
    let manifest = toy.join("manifest.jsonl");
    let m = manifest.to_str().unwrap();
    let (code, stdout) = cnndetect(&["data", "check", "--manifest", m], t);
    assert_eq!(code, 0);
    assert!(stdout.contains("ok: 8 records"), "{stdout}");

    // Usage and validation errors are 2.
    assert_eq!(cnndetect(&["no-such-command"], t).0, 2);
    assert_eq!(cnndetect(&["train", "--manifest", m, "--preset", "mixup", "--out", "x.json"], t).0, 2);
    let cfg = t.join("bad.toml");
    std::fs::write(&cfg, "output_dir = \"o\"\n[train]\ndata = \"toy:missing\"\n").unwrap();
    assert_eq!(cnndetect(&["report", "--config", cfg.to_str().unwrap()], t).0, 2);

    // Work that fails is 3: a training image is missing.
    std::fs::remove_file(toy.join("fake/f00001.png")).ok();
    let ck = t.join("ck.json");
    let (code, _) = cnndetect(
        &["train", "--manifest", m, "--arch", "tiny_cnn", "--from-scratch", "--max-epochs", "1", "--batch-size", "2", "--out", ck.to_str().unwrap()],
        t,
    );
    assert_eq!(code, 3);
}

#[test]
fn train_eval_rank_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let toy = t.join("toy");
    let p = |x: &std::path::Path| x.to_str().unwrap().to_string();
    cnndetect(
        &["data", "toy", "--kind", "decoder_nearest", "--n", "6", "--size", "224", "--train", "0.5", "--val", "0.17", "--out", &p(&toy)],
        t,
    );
    let m = p(&toy.join("manifest.jsonl"));
    let ck = p(&t.join("ck.json"));
    let (code, _) = cnndetect(
        &["train", "--manifest", &m, "--arch", "tiny_cnn", "--from-scratch", "--preset", "no_aug", "--max-epochs", "1", "--batch-size", "2", "--lr", "1e-3", "--out", &ck],
        t,
    );
    assert_eq!(code, 0);
    let (code, stdout) = cnndetect(&["eval", "--checkpoint", &ck, "--manifest", &m, "--resize-mode", "256"], t);
    assert_eq!(code, 0);
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(report["per_source"]["decoder_nearest"]["ap"].is_number());

    let real = p(&toy.join("real/r00000.png"));
    let fake = p(&toy.join("fake/f00000.png"));
    let (code, stdout) = cnndetect(&["eval", "--checkpoint", &ck, "--manifest", &m, "--calibrate", &real, &fake, "--n-crops", "4"], t);
    assert_eq!(code, 0);
    assert!(stdout.contains("acc_two_shot"));

    let gal = t.join("gallery");
    let (code, stdout) = cnndetect(&["rank", "--checkpoint", &ck, "--manifest", &m, "--out", &p(&gal)], t);
    assert_eq!(code, 0, "{stdout}");
    assert!(gal.join("index.html").is_file() && gal.join("gallery.json").is_file());

    let rob = t.join("rob");
    let (code, stdout) = cnndetect(&["robustness", "--checkpoint", &ck, "--manifest", &m, "--kind", "blur", "--levels", "0,1", "--out", &p(&rob)], t);
    assert_eq!(code, 0);
    assert!(stdout.starts_with("level,ap,acc_oracle\n0,"), "{stdout}");
    assert_eq!(cnndetect(&["robustness", "--checkpoint", &ck, "--manifest", &m, "--kind", "jpeg", "--levels", "101", "--out", &p(&rob)], t).0, 2);

    let (code, stdout) = cnndetect(&["spectrum", "--manifest", &m, "--source", "decoder_nearest", "--n", "4", "--out", &p(&t.join("spec"))], t);
    assert_eq!(code, 0);
    assert!(stdout.contains("half-band"));
}
