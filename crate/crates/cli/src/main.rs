//! `tmaseg` — command-line front end for the TMA cancer-segmentation
//! pipeline: annotation conversion, area-balanced splitting, training,
//! whole-core prediction, and per-core evaluation.
//!
//! All state lives in named files (PNGs, manifests, checkpoints, text
//! reports); no hidden state is kept between invocations. Exit codes:
//! 0 success, 1 usage error, 2 runtime error.

mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use tmaseg::evaluation::{curve_to_string, format_metric};
use tmaseg::trainer::best_checkpoint_path;
use tmaseg::{
    balance_split, decode_annotation, encode_labels, load_rgb, predict_core, predict_split,
    read_manifest, report_at, report_to_string, save_heatmap, save_rgb, sweep_threshold,
    to_binary_target, train, write_manifest, Checkpoint, CoreStore, EvalError, ModelError, Real,
    Split, TrainConfig, TrainerError,
};

use config::Config;

/// A classified failure: usage problems exit 1, everything else exits 2.
pub enum AppError {
    Usage(String),
    Runtime(String),
}

/// Tissue-microarray cancer segmentation: convert annotations, split
/// cores, train compact segmentation networks, predict probability
/// heatmaps, and evaluate pixel-wise precision/recall/F1 per core.
///
/// Every value flag can also be set in a `--config` file holding
/// `key = value` lines (keys are the long flag names, `#` starts a
/// comment); command-line flags override file values.
#[derive(Parser)]
#[command(name = "tmaseg", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    Convert(ConvertArgs),
    Split(SplitArgs),
    Train(TrainArgs),
    Predict(PredictArgs),
    Evaluate(EvaluateArgs),
}

/// Decode a color annotation raster into validated, palette-exact labels.
///
/// Off-palette pixels (beyond the tolerance radius of every palette
/// color) become the exclude class. Prints the per-class tissue areas
/// in pixels as `class<TAB>pixels` lines.
#[derive(Args)]
struct ConvertArgs {
    /// Annotation raster to decode (RGB PNG).
    #[arg(long, value_name = "PNG")]
    mask: Option<PathBuf>,
    /// Output path for the normalized label raster (RGB PNG).
    #[arg(long, value_name = "PNG")]
    out: Option<PathBuf>,
    /// Config file with `key = value` defaults for these flags.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

/// Assign cores to train/val/test splits, balancing class areas.
///
/// Scans a directory of `<id>.png` core images with `<id>.mask.png`
/// annotations and writes a manifest with one line per core. Prints
/// `split<TAB>cores` counts.
#[derive(Args)]
struct SplitArgs {
    /// Directory holding `<id>.png` cores and `<id>.mask.png` masks.
    #[arg(long, value_name = "DIR")]
    cores: Option<PathBuf>,
    /// Comma-separated train,val,test area fractions summing to 1
    /// [default: 0.5,0.25,0.25].
    #[arg(long, value_name = "A,B,C")]
    fractions: Option<String>,
    /// Seed for the assignment search order [default: 0].
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output manifest path.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Config file with `key = value` defaults for these flags.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

/// Train a segmentation network and write binary checkpoints.
///
/// Logs one `step<TAB>loss` line per optimization step and `# step N
/// val L` comment lines at validation points. The latest checkpoint
/// goes to --out and the best-validation checkpoint to `<out>.best`.
/// With the same seed and flags, training is byte-reproducible.
#[derive(Args)]
struct TrainArgs {
    /// Architecture preset: 123s, dilatednet, drn-c26, drn-c42, unet,
    /// densenet-d56, or densenet-d103, each also with `-compact`.
    #[arg(long, value_name = "PRESET")]
    arch: Option<String>,
    /// Split manifest written by `split`.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Directory of cores the manifest refers to.
    #[arg(long, value_name = "DIR")]
    cores: Option<PathBuf>,
    /// Total optimization steps, counted from step 1 even when
    /// resuming [default: 2000].
    #[arg(long, value_name = "N")]
    steps: Option<u64>,
    /// Seed for weight initialization and patch sampling [default: 0].
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Checkpoint output path.
    #[arg(long, value_name = "CKPT")]
    out: Option<PathBuf>,
    /// Square training patch size in pixels; must be a multiple of the
    /// preset's input alignment [default: 48].
    #[arg(long, value_name = "N")]
    patch: Option<usize>,
    /// Patches per optimization step [default: 4].
    #[arg(long, value_name = "N")]
    batch: Option<usize>,
    /// Adam learning rate [default: 0.0001].
    #[arg(long, value_name = "F")]
    lr: Option<f64>,
    /// Steps between validation passes [default: 200].
    #[arg(long, value_name = "N")]
    val_interval: Option<u64>,
    /// Disable flip/rotation augmentation of sampled patches.
    #[arg(long)]
    no_augment: bool,
    /// Resume from the checkpoint at --out and continue to --steps.
    #[arg(long)]
    resume: bool,
    /// Config file with `key = value` defaults for these flags.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

/// Predict a cancer-probability heatmap for one core image.
///
/// Slides a patch window over the image, stitches the overlapping
/// sigmoid outputs, and writes the probabilities as a grayscale PNG
/// (0 -> black, 1 -> white).
#[derive(Args)]
struct PredictArgs {
    /// Trained checkpoint file.
    #[arg(long, value_name = "CKPT")]
    ckpt: Option<PathBuf>,
    /// Core image to segment (RGB PNG).
    #[arg(long, value_name = "PNG")]
    image: Option<PathBuf>,
    /// Output heatmap path (grayscale PNG).
    #[arg(long, value_name = "PNG")]
    out: Option<PathBuf>,
    /// Sliding-window patch size; must be a multiple of the model's
    /// input alignment [default: 64].
    #[arg(long, value_name = "N")]
    patch: Option<usize>,
    /// Sliding-window stride, between 1 and the patch size [default:
    /// the patch size].
    #[arg(long, value_name = "N")]
    stride: Option<usize>,
    /// Config file with `key = value` defaults for these flags.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

/// Score a manifest split pixel-wise and write a per-core report.
///
/// Predicts a heatmap for every core in the chosen split, counts
/// true/false positives/negatives at the decision threshold, and
/// writes a tab-separated report with per-core precision/recall/F1
/// rows and their unweighted macro averages. With --sweep, scans
/// thresholds 0.00-1.00 (printing the full curve) and reports at the
/// macro-F1-optimal one. Prints the chosen threshold and the macro row.
#[derive(Args)]
struct EvaluateArgs {
    /// Trained checkpoint file.
    #[arg(long, value_name = "CKPT")]
    ckpt: Option<PathBuf>,
    /// Split manifest written by `split`.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Directory of cores the manifest refers to.
    #[arg(long, value_name = "DIR")]
    cores: Option<PathBuf>,
    /// Which manifest split to score: train, val, or test.
    #[arg(long, value_name = "SPLIT")]
    split: Option<String>,
    /// Sweep thresholds 0.00-1.00 and report at the best macro F1.
    #[arg(long)]
    sweep: bool,
    /// Fixed decision threshold in [0,1]; conflicts with --sweep
    /// [default: 0.5].
    #[arg(long, value_name = "F")]
    threshold: Option<f64>,
    /// Output report path.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Sliding-window patch size; must be a multiple of the model's
    /// input alignment [default: 64].
    #[arg(long, value_name = "N")]
    patch: Option<usize>,
    /// Sliding-window stride, between 1 and the patch size [default:
    /// the patch size].
    #[arg(long, value_name = "N")]
    stride: Option<usize>,
    /// Worker threads for per-core prediction; the TMASEG_THREADS
    /// environment variable sets the default [default: 1].
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Config file with `key = value` defaults for these flags.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return ExitCode::from(if ok { 0 } else { 1 });
        }
    };
    let result = match cli.command {
        Command::Convert(args) => run_convert(args),
        Command::Split(args) => run_split(args),
        Command::Train(args) => run_train(args),
        Command::Predict(args) => run_predict(args),
        Command::Evaluate(args) => run_evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(AppError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Any library failure that is not a flag-value problem.
fn runtime(e: impl std::fmt::Display) -> AppError {
    AppError::Runtime(e.to_string())
}

/// Trainer failures caused by flag values (bad preset, misaligned
/// patch, exhausted steps) are usage errors; the rest are runtime.
fn train_error(e: TrainerError) -> AppError {
    match &e {
        TrainerError::InvalidConfig(_) | TrainerError::Model(ModelError::InvalidConfig(_)) => {
            AppError::Usage(e.to_string())
        }
        _ => AppError::Runtime(e.to_string()),
    }
}

/// Bad patch/stride geometry is a usage error; the rest are runtime.
fn eval_error(e: EvalError) -> AppError {
    match &e {
        EvalError::InvalidGeometry(_) => AppError::Usage(e.to_string()),
        _ => AppError::Runtime(e.to_string()),
    }
}

fn missing(flag: &str) -> AppError {
    AppError::Usage(format!("missing required {flag}"))
}

/// `--threads` default: the TMASEG_THREADS environment variable if set,
/// otherwise 1.
fn env_threads() -> Result<usize, AppError> {
    match std::env::var("TMASEG_THREADS") {
        Err(std::env::VarError::NotPresent) => Ok(1),
        Err(e) => Err(AppError::Usage(format!("TMASEG_THREADS: {e}"))),
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|e| AppError::Usage(format!("TMASEG_THREADS: bad value `{s}`: {e}"))),
    }
}

fn check_threads(threads: usize) -> Result<usize, AppError> {
    if threads == 0 {
        return Err(AppError::Usage("--threads must be at least 1".into()));
    }
    Ok(threads)
}

/// Parses `a,b,c` into three positive fractions summing to 1 (within
/// 1e-6).
fn parse_fractions(text: &str) -> Result<[f64; 3], AppError> {
    let bad = |detail: String| {
        AppError::Usage(format!("--fractions `{text}`: {detail}"))
    };
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(bad(format!("expected three comma-separated numbers, got {}", parts.len())));
    }
    let mut f = [0.0f64; 3];
    for (slot, part) in f.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|e| bad(format!("bad number `{}`: {e}", part.trim())))?;
        if !slot.is_finite() || *slot <= 0.0 {
            return Err(bad(format!("fractions must be positive, got {}", part.trim())));
        }
    }
    let sum: f64 = f.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(bad(format!("fractions must sum to 1, got {sum:.4}")));
    }
    Ok(f)
}

fn run_convert(args: ConvertArgs) -> Result<(), AppError> {
    let mut file = Config::load(args.config.as_deref())?;
    let mask_path: PathBuf = args.mask.or(file.take("mask")?).ok_or_else(|| missing("--mask <PNG>"))?;
    let out: PathBuf = args.out.or(file.take("out")?).ok_or_else(|| missing("--out <PNG>"))?;
    file.finish()?;

    let raster = load_rgb(&mask_path).map_err(runtime)?;
    let labels = decode_annotation(&raster);
    save_rgb(&encode_labels(&labels), &out).map_err(runtime)?;

    let areas = to_binary_target(&labels).areas();
    let mut stdout = std::io::stdout().lock();
    for (name, pixels) in [
        ("cancer", areas.cancer),
        ("stroma", areas.stroma),
        ("necrosis", areas.necrosis),
        ("normal", areas.normal),
    ] {
        writeln!(stdout, "{name}\t{pixels}").map_err(runtime)?;
    }
    Ok(())
}

fn run_split(args: SplitArgs) -> Result<(), AppError> {
    let mut file = Config::load(args.config.as_deref())?;
    let cores: PathBuf = args.cores.or(file.take("cores")?).ok_or_else(|| missing("--cores <DIR>"))?;
    let fractions_text: String =
        args.fractions.or(file.take("fractions")?).unwrap_or_else(|| "0.5,0.25,0.25".into());
    let seed: u64 = args.seed.or(file.take("seed")?).unwrap_or(0);
    let out: PathBuf = args.out.or(file.take("out")?).ok_or_else(|| missing("--out <FILE>"))?;
    file.finish()?;

    let fractions = parse_fractions(&fractions_text)?;
    let records = CoreStore::new(&cores).scan().map_err(runtime)?;
    let manifest = balance_split(&records, fractions, seed).map_err(runtime)?;
    write_manifest(&manifest, &out).map_err(runtime)?;

    let mut stdout = std::io::stdout().lock();
    for split in [Split::Train, Split::Val, Split::Test] {
        writeln!(stdout, "{}\t{}", split.name(), manifest.split_ids(split).len())
            .map_err(runtime)?;
    }
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<(), AppError> {
    let mut file = Config::load(args.config.as_deref())?;
    let arch: String = args.arch.or(file.take("arch")?).ok_or_else(|| missing("--arch <PRESET>"))?;
    let manifest_path: PathBuf =
        args.manifest.or(file.take("manifest")?).ok_or_else(|| missing("--manifest <FILE>"))?;
    let cores: PathBuf = args.cores.or(file.take("cores")?).ok_or_else(|| missing("--cores <DIR>"))?;
    let out: PathBuf = args.out.or(file.take("out")?).ok_or_else(|| missing("--out <CKPT>"))?;
    let seed: u64 = args.seed.or(file.take("seed")?).unwrap_or(0);

    let mut cfg = TrainConfig::new(&arch, seed, out);
    if let Some(steps) = args.steps.or(file.take("steps")?) {
        cfg.steps = steps;
    }
    if let Some(patch) = args.patch.or(file.take("patch")?) {
        cfg.patch = patch;
    }
    if let Some(batch) = args.batch.or(file.take("batch")?) {
        cfg.batch = batch;
    }
    if let Some(lr) = args.lr.or(file.take("lr")?) {
        cfg.lr = lr as Real;
    }
    if let Some(interval) = args.val_interval.or(file.take("val-interval")?) {
        cfg.val_interval = interval;
    }
    cfg.augment = if args.no_augment { false } else { file.take("augment")?.unwrap_or(true) };
    let resume = args.resume || file.take("resume")?.unwrap_or(false);
    file.finish()?;

    let manifest = read_manifest(&manifest_path).map_err(runtime)?;
    let store = CoreStore::new(&cores);
    let start = if resume { Some(Checkpoint::load(&cfg.out).map_err(train_error)?) } else { None };

    let mut stdout = std::io::stdout().lock();
    train(&cfg, &manifest, &store, start, &mut stdout).map_err(train_error)?;
    writeln!(stdout, "# saved {}", cfg.out.display()).map_err(runtime)?;
    if best_checkpoint_path(&cfg.out).exists() {
        writeln!(stdout, "# saved {}", best_checkpoint_path(&cfg.out).display())
            .map_err(runtime)?;
    }
    Ok(())
}

fn run_predict(args: PredictArgs) -> Result<(), AppError> {
    let mut file = Config::load(args.config.as_deref())?;
    let ckpt_path: PathBuf = args.ckpt.or(file.take("ckpt")?).ok_or_else(|| missing("--ckpt <CKPT>"))?;
    let image_path: PathBuf =
        args.image.or(file.take("image")?).ok_or_else(|| missing("--image <PNG>"))?;
    let out: PathBuf = args.out.or(file.take("out")?).ok_or_else(|| missing("--out <PNG>"))?;
    let patch: usize = args.patch.or(file.take("patch")?).unwrap_or(64);
    let stride: usize = args.stride.or(file.take("stride")?).unwrap_or(patch);
    file.finish()?;

    let net = Checkpoint::load(&ckpt_path).map_err(train_error)?.network();
    let image = load_rgb(&image_path).map_err(runtime)?;
    let heatmap = predict_core(&net, &image, patch, stride).map_err(eval_error)?;
    save_heatmap(&heatmap, &out).map_err(runtime)?;
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<(), AppError> {
    let mut file = Config::load(args.config.as_deref())?;
    let ckpt_path: PathBuf = args.ckpt.or(file.take("ckpt")?).ok_or_else(|| missing("--ckpt <CKPT>"))?;
    let manifest_path: PathBuf =
        args.manifest.or(file.take("manifest")?).ok_or_else(|| missing("--manifest <FILE>"))?;
    let cores: PathBuf = args.cores.or(file.take("cores")?).ok_or_else(|| missing("--cores <DIR>"))?;
    let split_name: String =
        args.split.or(file.take("split")?).ok_or_else(|| missing("--split <SPLIT>"))?;
    let report_path: PathBuf =
        args.report.or(file.take("report")?).ok_or_else(|| missing("--report <FILE>"))?;
    let sweep = args.sweep || file.take("sweep")?.unwrap_or(false);
    let fixed_threshold: Option<f64> = args.threshold.or(file.take("threshold")?);
    let patch: usize = args.patch.or(file.take("patch")?).unwrap_or(64);
    let stride: usize = args.stride.or(file.take("stride")?).unwrap_or(patch);
    let threads = check_threads(match args.threads.or(file.take("threads")?) {
        Some(t) => t,
        None => env_threads()?,
    })?;
    file.finish()?;

    let split = Split::from_name(&split_name).ok_or_else(|| {
        AppError::Usage(format!("--split must be train, val, or test, got `{split_name}`"))
    })?;
    if sweep && fixed_threshold.is_some() {
        return Err(AppError::Usage("--threshold conflicts with --sweep".into()));
    }
    if let Some(t) = fixed_threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(AppError::Usage(format!("--threshold must be in [0,1], got {t}")));
        }
    }

    let net = Checkpoint::load(&ckpt_path).map_err(train_error)?.network();
    let manifest = read_manifest(&manifest_path).map_err(runtime)?;
    let store = CoreStore::new(&cores);
    let predictions =
        predict_split(&net, &manifest, split, &store, patch, stride, threads).map_err(eval_error)?;

    let mut stdout = std::io::stdout().lock();
    let threshold = if sweep {
        let (best, curve) = sweep_threshold(&predictions).map_err(eval_error)?;
        write!(stdout, "{}", curve_to_string(&curve)).map_err(runtime)?;
        best
    } else {
        fixed_threshold.unwrap_or(0.5)
    };

    let report = report_at(&predictions, threshold, &net.config.preset_label()).map_err(eval_error)?;
    std::fs::write(&report_path, report_to_string(&report))
        .map_err(|e| AppError::Runtime(format!("cannot write {}: {e}", report_path.display())))?;

    writeln!(stdout, "threshold\t{:.2}", report.threshold).map_err(runtime)?;
    writeln!(
        stdout,
        "macro\t{}\t{}\t{}",
        format_metric(report.macro_precision),
        format_metric(report.macro_recall),
        format_metric(report.macro_f1)
    )
    .map_err(runtime)?;
    Ok(())
}
