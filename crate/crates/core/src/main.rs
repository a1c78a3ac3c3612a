use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use cnndetect::augment::AugmentationPolicy;
use cnndetect::corpus::{
    build_manifest_from_tree, load_image, load_manifest, sample_split, synth_toy_corpus, CategoryFilter, Label, PreprocessRule,
    Split, ToyKind, ToySpec,
};
use cnndetect::detector::{build_model, train, BackboneSpec, Checkpoint, TrainSchedule, TrainingFingerprint};
use cnndetect::dip::{build_dip_dataset, DipConfig};
use cnndetect::harness::{rank_images, run_experiment, ExperimentConfig};
use cnndetect::metrics::{evaluate, two_shot_calibrate, EvalOptions, ResizeMode};
use cnndetect::rng::derived_stream;
use cnndetect::robustness::{robustness_sweep, PerturbationGrid, PerturbationKind};
use cnndetect::spectra::average_spectrum_from;
use cnndetect::{Detector, Error, Result, SpectrumMap};

#[derive(Parser)]
#[command(name = "cnndetect", version, about = "Detect CNN-generated images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build, sample, synthesize or check manifests.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Train a detector on the train/val splits of a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split of a manifest.
    Eval(EvalArgs),
    /// Sweep a blur or JPEG perturbation grid.
    Robustness(RobustnessArgs),
    /// Average high-pass spectrum of one source.
    Spectrum(SpectrumArgs),
    /// Build a deep-image-prior fake set from real images.
    Dip(DipArgs),
    /// Fakeness ranking gallery.
    Rank(RankArgs),
    /// Run a whole experiment from a TOML config.
    Report {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum DataCommand {
    /// Synthesize a toy corpus.
    Toy {
        #[arg(long, value_parser = parse_toy_kind)]
        kind: ToyKind,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 256)]
        size: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        train: f64,
        #[arg(long, default_value_t = 0.0)]
        val: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Index a `<source>/[<category>/]{0_real,1_fake}/` tree.
    Build {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        /// Rule for sources without an override, e.g. `resize_short_side:256`.
        #[arg(long, default_value = "keep")]
        rule: String,
        /// Per-source override `source=rule`; repeatable.
        #[arg(long = "source-rule")]
        source_rules: Vec<String>,
    },
    /// Subsample categories and a fraction of every group.
    Sample {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        /// Comma-separated categories to keep.
        #[arg(long)]
        categories: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a manifest and print group counts.
    Check {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Validation manifest; defaults to the val split of `--manifest`.
    #[arg(long)]
    val_manifest: Option<PathBuf>,
    #[arg(long, default_value = "blur_jpeg_05")]
    preset: String,
    #[arg(long, default_value = "resnet50")]
    arch: String,
    #[arg(long)]
    from_scratch: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "none", value_parser = ResizeMode::parse)]
    resize_mode: ResizeMode,
    /// One real and one fake image for two-shot calibration.
    #[arg(long, num_args = 2, value_names = ["REAL", "FAKE"])]
    calibrate: Option<Vec<PathBuf>>,
    #[arg(long, default_value_t = 128)]
    n_crops: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path; printed to stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RobustnessArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_parser = PerturbationKind::parse)]
    kind: PerturbationKind,
    /// Comma-separated levels, e.g. `0,1,2` or `lossless,90,50`.
    #[arg(long)]
    levels: Option<String>,
    #[arg(long, default_value = "none", value_parser = ResizeMode::parse)]
    resize_mode: ResizeMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    source: String,
    #[arg(long, default_value = "fake", value_parser = parse_label)]
    label: Label,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Center-crop every image to this side first.
    #[arg(long)]
    crop: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DipArgs {
    /// Manifest whose real images are reconstructed.
    #[arg(long)]
    manifest: PathBuf,
    /// JSON file with DIP settings; built-in defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    oversample_real: usize,
    /// Reconstruct only the first `limit` real records (by id).
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 25.0, 50.0, 75.0, 100.0])]
    percentiles: Vec<f64>,
    #[arg(long)]
    combined: bool,
    #[arg(long, default_value = "none", value_parser = ResizeMode::parse)]
    resize_mode: ResizeMode,
    #[arg(long)]
    out: PathBuf,
}

fn parse_toy_kind(s: &str) -> Result<ToyKind> {
    ToyKind::parse(s)
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(Error::InvalidArgument(format!("unknown split `{s}`"))),
    }
}

fn parse_label(s: &str) -> Result<Label> {
    match s {
        "real" => Ok(Label::Real),
        "fake" => Ok(Label::Fake),
        _ => Err(Error::InvalidArgument(format!("unknown label `{s}`"))),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_detector(path: &Path) -> Result<(Detector, String)> {
    let ck = Checkpoint::load(path)?;
    Ok((ck.to_model()?, ck.hash()?))
}

fn run_data(cmd: DataCommand) -> Result<()> {
    match cmd {
        DataCommand::Toy { kind, n, size, seed, train, val, out } => {
            let m = synth_toy_corpus(&ToySpec::new(kind, n, size, seed).with_splits(train, val), &out)?;
            println!("{}", out.join("manifest.jsonl").display());
            info!("{} records", m.records.len());
        }
        DataCommand::Build { root, out, split, rule, source_rules } => {
            let default_rule = PreprocessRule::parse(&rule)?;
            let mut rules = BTreeMap::new();
            for s in source_rules {
                let (name, r) = s
                    .split_once('=')
                    .ok_or_else(|| Error::InvalidArgument(format!("expected source=rule, got `{s}`")))?;
                rules.insert(name.to_string(), PreprocessRule::parse(r)?);
            }
            let m = build_manifest_from_tree(&root, &rules, default_rule, split)?;
            let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            m.rebase(dir).save(&out)?;
            println!("{} records", m.records.len());
        }
        DataCommand::Sample { manifest, fraction, categories, seed, out } => {
            let m = load_manifest(&manifest)?;
            let filter = match categories {
                Some(c) => CategoryFilter::only(c.split(',').map(str::trim).filter(|s| !s.is_empty())),
                None => CategoryFilter::All,
            };
            let s = sample_split(&m, &filter, fraction, seed)?;
            let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            s.rebase(dir).save(&out)?;
            println!("{} of {} records kept", s.records.len(), m.records.len());
        }
        DataCommand::Check { manifest } => {
            let m = load_manifest(&manifest)?;
            for ((source, split), (real, fake)) in m.group_counts() {
                println!("{source}\t{}\treal {real}\tfake {fake}", split.as_str());
            }
            println!("ok: {} records, fingerprint {}", m.records.len(), m.fingerprint());
        }
    }
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let policy = AugmentationPolicy::preset(&a.preset)?;
    let mut schedule = TrainSchedule::default();
    if let Some(v) = a.max_epochs {
        schedule.max_epochs = v;
    }
    if let Some(v) = a.batch_size {
        schedule.batch_size = v;
    }
    if let Some(v) = a.lr {
        schedule.lr_initial = v;
    }
    if let Some(v) = a.patience {
        schedule.plateau_patience = v;
    }
    let m = load_manifest(&a.manifest)?;
    let train_set = m.only_split(Split::Train);
    let val_set = match &a.val_manifest {
        Some(p) => load_manifest(p)?.only_split(Split::Val),
        None => m.only_split(Split::Val),
    };
    let spec = BackboneSpec { architecture_id: a.arch.clone(), pretrained: !a.from_scratch, input_size: 224 };
    let model: Detector = build_model(&spec, a.seed)?;
    let (model, history) = train(model, &train_set, &val_set, &policy, &schedule, a.seed)?;
    let fp = TrainingFingerprint { policy_preset: a.preset, manifest_hash: train_set.fingerprint(), seed: a.seed, weight_decay: 0.0 };
    Checkpoint::from_model(&model, Some(schedule), Some(fp)).save(&a.out)?;
    write_file(&a.out.with_extension("history.json"), &serde_json::to_string_pretty(&history)?)?;
    println!(
        "best val acc {:.4} at epoch {} of {}",
        history.best_val_acc, history.best_epoch, history.total_epochs
    );
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let (mut model, _) = load_detector(&a.checkpoint)?;
    let m = load_manifest(&a.manifest)?;
    let calibration = match &a.calibrate {
        Some(pair) => {
            let (real, fake) = (load_image(&pair[0])?, load_image(&pair[1])?);
            let (rid, fid) = (pair[0].to_string_lossy().into_owned(), pair[1].to_string_lossy().into_owned());
            let mut rng = derived_stream(a.seed, &["calibration", &rid, &fid]);
            let cal = two_shot_calibrate(&model, (&rid, &real), (&fid, &fake), a.n_crops, &mut rng)?;
            model.calibration_bias = cal.bias as f32;
            Some(cal)
        }
        None => None,
    };
    let opts = EvalOptions { resize_mode: a.resize_mode, calibration, config_fingerprint: String::new() };
    let (report, _) = evaluate(&model, &m, &opts)?;
    let json = report.to_json()?;
    match &a.out {
        Some(p) => {
            write_file(p, &json)?;
            write_file(&p.with_extension("pr.csv"), &report.pr_csv())?;
            println!("mAP {:.4}", report.map);
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn run_robustness(a: RobustnessArgs) -> Result<()> {
    let (model, fp) = load_detector(&a.checkpoint)?;
    let m = load_manifest(&a.manifest)?;
    let grid = match &a.levels {
        Some(l) => PerturbationGrid::from_levels(a.kind, l)?,
        None => PerturbationGrid::default_for(a.kind),
    };
    let curve = robustness_sweep(&model, &m, &grid, a.resize_mode, &fp)?;
    let (csv, png) = curve.export(&a.out)?;
    print!("{}", curve.to_csv());
    info!("wrote {} and {}", csv.display(), png.display());
    Ok(())
}

fn run_spectrum(a: SpectrumArgs) -> Result<()> {
    let m = load_manifest(&a.manifest)?;
    let recs: Vec<_> = m.records.iter().filter(|r| r.source_id == a.source && r.label == a.label).collect();
    if recs.is_empty() {
        return Err(Error::Validation(format!("no {} records for source `{}`", a.label.as_str(), a.source)));
    }
    let load = |i: usize| {
        let img = m.load(recs[i])?;
        match a.crop {
            Some(c) => cnndetect::corpus::center_crop(&img, c),
            None => Ok(img),
        }
    };
    let map: SpectrumMap = average_spectrum_from(recs.len(), load, a.n, a.seed, &a.source)?;
    let stem = a.out.join(format!("spectrum_{}_{}", a.source, a.label.as_str()));
    map.save_png(&stem.with_extension("png"))?;
    map.save_raw(&stem.with_extension("bin"), &stem.with_extension("json"))?;
    println!(
        "{} images, half-band peak / median {:.3}, symmetry error {:.2e}",
        map.n_averaged,
        map.half_band_peak_ratio(),
        map.symmetry_error()
    );
    Ok(())
}

fn run_dip(a: DipArgs) -> Result<()> {
    let cfg: DipConfig = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => DipConfig::default(),
    };
    let mut m = load_manifest(&a.manifest)?;
    m.records.retain(|r| r.label == Label::Real);
    m.records.sort_by(|x, y| x.id.cmp(&y.id));
    if let Some(l) = a.limit {
        m.records.truncate(l);
    }
    let (out, summaries) = build_dip_dataset(&m, &cfg, &a.out, a.oversample_real)?;
    write_file(&a.out.join("summaries.json"), &serde_json::to_string_pretty(&summaries)?)?;
    println!("{} records written to {}", out.records.len(), a.out.join("manifest.jsonl").display());
    Ok(())
}

fn run_rank(a: RankArgs) -> Result<()> {
    let (model, _) = load_detector(&a.checkpoint)?;
    let m = load_manifest(&a.manifest)?;
    if a.percentiles.iter().any(|p| !(0.0..=100.0).contains(p)) {
        return Err(Error::Validation("percentiles must lie in [0, 100]".into()));
    }
    let gallery = rank_images(&model, &m, &a.percentiles, a.combined, a.resize_mode)?;
    gallery.export(&m, &a.out, model.spec.input_size)?;
    for (source, entries) in &gallery.per_source {
        let ids: Vec<&str> = entries.iter().map(|e| e.id.as_str()).collect();
        println!("{source}: {}", ids.join(" "));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Data { command } => run_data(command),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Robustness(a) => run_robustness(a),
        Command::Spectrum(a) => run_spectrum(a),
        Command::Dip(a) => run_dip(a),
        Command::Rank(a) => run_rank(a),
        Command::Report { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let bundle = run_experiment(&cfg)?;
            for (name, r) in &bundle.evaluations {
                println!("{name}: mAP {:.4}", r.map);
            }
            println!("{} artifacts in {}", bundle.index.artifacts.len(), bundle.dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
