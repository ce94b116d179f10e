//! End-to-end tests of the `tmaseg` binary: flag plumbing, config-file
//! merging, exit codes, and byte-reproducibility of every artifact the
//! subcommands write.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use tmaseg::annotation::palette_color;
use tmaseg::{
    build_model, load_rgb, parse_report, read_manifest, save_rgb, write_manifest, Checkpoint,
    ClassAreas, ImageRGB, Label, ModelConfig, Split, SplitManifest,
};

/// The binary under test, with the environment scrubbed of anything the
/// CLI reads implicitly.
fn cmd() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tmaseg"));
    c.env_remove("TMASEG_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    cmd().args(args).output().expect("run tmaseg")
}

fn stdout_text(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

fn stderr_text(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf8 stderr")
}

#[track_caller]
fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "expected exit {code}\nstdout:\n{}\nstderr:\n{}",
        stdout_text(out),
        stderr_text(out)
    );
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf8 path")
}

/// Writes `count` synthetic annotated cores into `dir`, creating it.
fn synth_cores(dir: &Path, count: usize, size: usize, seed: u64) -> Vec<String> {
    std::fs::create_dir_all(dir).expect("create cores dir");
    tmaseg::synthetic::write_dataset(dir, count, size, seed, true).expect("synthetic cores")
}

/// Hand-built manifest: the first `train` ids to the train split, the
/// next `val` to validation, the rest to test.
fn manifest_with(ids: &[String], train: usize, val: usize, path: &Path) {
    let entries = ids
        .iter()
        .enumerate()
        .map(|(i, id)| tmaseg::dataset::ManifestEntry {
            core_id: id.clone(),
            split: if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            },
            areas: ClassAreas::default(),
        })
        .collect();
    write_manifest(&SplitManifest { seed: 0, entries }, path).expect("write manifest");
}

/// A checkpoint whose network emits logit 0 everywhere (all trainable
/// parameters zeroed), so every predicted probability is exactly 0.5.
fn zero_logit_checkpoint(path: &Path) {
    let mut net =
        build_model(&ModelConfig::preset("123s-compact", 3).expect("preset")).expect("build");
    for (_, entry) in net.params.entries_mut() {
        if entry.trainable {
            entry.value.data_mut().fill(0.0);
        }
    }
    let ckpt = Checkpoint {
        model: net.config.clone(),
        train_seed: 0,
        best_val_loss: f64::INFINITY,
        params: net.params,
    };
    ckpt.save(path).expect("save checkpoint");
}

// ---------------------------------------------------------------------
// Help, version, and argument validation
// ---------------------------------------------------------------------

#[test]
fn help_documents_every_flag_of_every_subcommand() {
    let expected: &[(&str, &[&str])] = &[
        ("convert", &["--mask", "--out", "--config"]),
        ("split", &["--cores", "--fractions", "--seed", "--out", "--config"]),
        (
            "train",
            &[
                "--arch",
                "--manifest",
                "--cores",
                "--steps",
                "--seed",
                "--out",
                "--patch",
                "--batch",
                "--lr",
                "--val-interval",
                "--no-augment",
                "--resume",
                "--config",
            ],
        ),
        ("predict", &["--ckpt", "--image", "--out", "--patch", "--stride", "--config"]),
        (
            "evaluate",
            &[
                "--ckpt",
                "--manifest",
                "--cores",
                "--split",
                "--sweep",
                "--threshold",
                "--report",
                "--patch",
                "--stride",
                "--threads",
                "--config",
            ],
        ),
    ];
    for (sub, flags) in expected {
        let out = run(&[sub, "--help"]);
        assert_exit(&out, 0);
        let help = stdout_text(&out);
        for flag in *flags {
            assert!(help.contains(flag), "`{sub} --help` does not document {flag}:\n{help}");
        }
    }

    let top = run(&["--help"]);
    assert_exit(&top, 0);
    let help = stdout_text(&top);
    for sub in ["convert", "split", "train", "predict", "evaluate"] {
        assert!(help.contains(sub), "top-level help misses {sub}");
    }
}

#[test]
fn version_prints_and_exits_zero() {
    let out = run(&["--version"]);
    assert_exit(&out, 0);
    assert!(stdout_text(&out).contains("tmaseg"));
}

#[test]
fn bare_and_bogus_invocations_are_usage_errors() {
    assert_exit(&run(&[]), 1);
    assert_exit(&run(&["annotate"]), 1);
    assert_exit(&run(&["convert", "--bogus-flag", "x"]), 1);
}

#[test]
fn missing_required_flags_are_usage_errors() {
    let out = run(&["convert", "--out", "/tmp/never-written.png"]);
    assert_exit(&out, 1);
    assert!(stderr_text(&out).contains("--mask"), "stderr: {}", stderr_text(&out));

    let out = run(&["predict", "--image", "/tmp/a.png", "--out", "/tmp/b.png"]);
    assert_exit(&out, 1);
    assert!(stderr_text(&out).contains("--ckpt"));
}

// ---------------------------------------------------------------------
// convert
// ---------------------------------------------------------------------

#[test]
fn convert_normalizes_annotations_and_prints_areas() {
    let dir = TempDir::new().unwrap();
    let mask_path = dir.path().join("raw.png");
    let out_path = dir.path().join("labels.png");

    // Exact red, off-palette-but-tolerated red, exact blue, and a gray
    // far from every palette color (decodes to the exclude class).
    let mut mask = ImageRGB::filled(2, 2, [255, 0, 0]);
    mask.set_pixel(0, 1, [250, 10, 20]);
    mask.set_pixel(1, 0, [0, 0, 255]);
    mask.set_pixel(1, 1, [100, 100, 100]);
    save_rgb(&mask, &mask_path).unwrap();

    let out = run(&["convert", "--mask", path_str(&mask_path), "--out", path_str(&out_path)]);
    assert_exit(&out, 0);
    assert_eq!(stdout_text(&out), "cancer\t2\nstroma\t1\nnecrosis\t0\nnormal\t0\n");

    let normalized = load_rgb(&out_path).unwrap();
    assert_eq!(normalized.pixel(0, 0), palette_color(Label::Cancer));
    assert_eq!(normalized.pixel(0, 1), palette_color(Label::Cancer));
    assert_eq!(normalized.pixel(1, 0), palette_color(Label::Stroma));
    assert_eq!(normalized.pixel(1, 1), palette_color(Label::Exclude));
}

#[test]
fn convert_missing_input_file_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "convert",
        "--mask",
        path_str(&dir.path().join("absent.png")),
        "--out",
        path_str(&dir.path().join("labels.png")),
    ]);
    assert_exit(&out, 2);
}

// ---------------------------------------------------------------------
// split
// ---------------------------------------------------------------------

#[test]
fn split_writes_a_manifest_and_prints_counts() {
    let dir = TempDir::new().unwrap();
    let cores_dir = dir.path().join("cores");
    let ids = synth_cores(&cores_dir, 6, 64, 11);
    let manifest_path = dir.path().join("manifest.tsv");

    let out = run(&[
        "split",
        "--cores",
        path_str(&cores_dir),
        "--seed",
        "4",
        "--out",
        path_str(&manifest_path),
    ]);
    assert_exit(&out, 0);

    let manifest = read_manifest(&manifest_path).expect("manifest parses");
    let mut seen: Vec<&str> = manifest.entries.iter().map(|e| e.core_id.as_str()).collect();
    seen.sort();
    let mut expected: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
    expected.sort();
    assert_eq!(seen, expected, "every scanned core is assigned");

    let mut lines = String::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        lines.push_str(&format!("{}\t{}\n", split.name(), manifest.split_ids(split).len()));
    }
    assert_eq!(stdout_text(&out), lines, "printed counts match the manifest");
}

#[test]
fn split_fraction_validation_is_a_usage_error() {
    for bad in ["0.4,0.3,0.2", "0.5,0.5", "0.5,0.25,x", "1,-0.5,0.5", "2,3,4"] {
        let out = run(&["split", "--cores", "/nonexistent", "--fractions", bad, "--out", "/tmp/m"]);
        assert_exit(&out, 1);
        assert!(stderr_text(&out).contains("--fractions"), "stderr: {}", stderr_text(&out));
    }
}

#[test]
fn seeded_split_reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cores_dir = dir.path().join("cores");
    synth_cores(&cores_dir, 5, 64, 3);
    let manifest_path = dir.path().join("manifest.tsv");
    let args = [
        "split",
        "--cores",
        path_str(&cores_dir),
        "--seed",
        "9",
        "--out",
        path_str(&manifest_path),
    ];

    let first = run(&args);
    assert_exit(&first, 0);
    let bytes_a = std::fs::read(&manifest_path).unwrap();
    let second = run(&args);
    assert_exit(&second, 0);
    let bytes_b = std::fs::read(&manifest_path).unwrap();

    assert_eq!(bytes_a, bytes_b);
    assert_eq!(stdout_text(&first), stdout_text(&second));
}

// ---------------------------------------------------------------------
// config files
// ---------------------------------------------------------------------

#[test]
fn config_file_supplies_values_and_flags_override_them() {
    let dir = TempDir::new().unwrap();
    let cores_dir = dir.path().join("cores");
    synth_cores(&cores_dir, 5, 64, 21);
    let manifest_path = dir.path().join("manifest.tsv");
    let config_path = dir.path().join("split.conf");
    std::fs::write(
        &config_path,
        format!(
            "# split options\ncores = {}\nfractions = 0.4,0.3,0.2  # bad on purpose\nout = {}\n",
            path_str(&cores_dir),
            path_str(&manifest_path),
        ),
    )
    .unwrap();

    // Config alone: the file's fractions don't sum to 1.
    let out = run(&["split", "--config", path_str(&config_path)]);
    assert_exit(&out, 1);
    assert!(stderr_text(&out).contains("sum to 1"));

    // A flag overrides the bad file value.
    let out = run(&[
        "split",
        "--config",
        path_str(&config_path),
        "--fractions",
        "0.5,0.25,0.25",
    ]);
    assert_exit(&out, 0);
    assert!(manifest_path.exists());
}

#[test]
fn unknown_and_duplicate_config_keys_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let config_path = dir.path().join("bad.conf");

    std::fs::write(&config_path, "cores = /tmp\nstride = 4\n").unwrap();
    let out = run(&["split", "--config", path_str(&config_path), "--out", "/tmp/m"]);
    assert_exit(&out, 1);
    assert!(
        stderr_text(&out).contains("unknown config key `stride`"),
        "stderr: {}",
        stderr_text(&out)
    );

    std::fs::write(&config_path, "seed = 1\nseed = 2\n").unwrap();
    let out = run(&["split", "--config", path_str(&config_path)]);
    assert_exit(&out, 1);
    assert!(stderr_text(&out).contains("duplicate key `seed`"));

    std::fs::write(&config_path, "just some words\n").unwrap();
    let out = run(&["split", "--config", path_str(&config_path)]);
    assert_exit(&out, 1);
    assert!(stderr_text(&out).contains("expected `key = value`"));

    let out = run(&["split", "--config", path_str(&dir.path().join("absent.conf"))]);
    assert_exit(&out, 1);
}

// ---------------------------------------------------------------------
// train
// ---------------------------------------------------------------------

/// Writes cores + a 3/1/1 manifest and returns (cores dir, manifest path).
fn training_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let cores_dir = dir.join("cores");
    let ids = synth_cores(&cores_dir, 5, 64, 31);
    let manifest_path = dir.join("manifest.tsv");
    manifest_with(&ids, 3, 1, &manifest_path);
    (cores_dir, manifest_path)
}

#[test]
fn train_logs_losses_and_writes_both_checkpoints() {
    let dir = TempDir::new().unwrap();
    let (cores_dir, manifest_path) = training_fixture(dir.path());
    let ckpt = dir.path().join("model.ckpt");

    let out = run(&[
        "train",
        "--arch",
        "123s-compact",
        "--manifest",
        path_str(&manifest_path),
        "--cores",
        path_str(&cores_dir),
        "--steps",
        "6",
        "--val-interval",
        "3",
        "--patch",
        "16",
        "--batch",
        "2",
        "--seed",
        "1",
        "--out",
        path_str(&ckpt),
    ]);
    assert_exit(&out, 0);

    let log = stdout_text(&out);
    let loss_lines: Vec<&str> =
        log.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).collect();
    assert_eq!(loss_lines.len(), 6, "one loss line per step:\n{log}");
    for (i, line) in loss_lines.iter().enumerate() {
        let (step, loss) = line.split_once('\t').expect("step\\tloss");
        assert_eq!(step.parse::<u64>().unwrap(), i as u64 + 1);
        assert!(loss.parse::<f64>().unwrap().is_finite());
    }
    assert!(log.contains("# step 3 val "), "validation comment at step 3:\n{log}");
    assert!(log.contains("# step 6 val "));

    let latest = Checkpoint::load(&ckpt).expect("latest checkpoint");
    assert_eq!(latest.params.step(), 6);
    assert_eq!(latest.model.arch.name(), "123s");
    let best_path = dir.path().join("model.ckpt.best");
    assert!(best_path.exists(), "best checkpoint written at a validation point");
    assert!(Checkpoint::load(&best_path).unwrap().best_val_loss.is_finite());
}

#[test]
fn train_reruns_with_one_seed_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let (cores_dir, manifest_path) = training_fixture(dir.path());
    let ckpt = dir.path().join("model.ckpt");
    let args = [
        "train",
        "--arch",
        "123s-compact",
        "--manifest",
        path_str(&manifest_path),
        "--cores",
        path_str(&cores_dir),
        "--steps",
        "4",
        "--val-interval",
        "2",
        "--patch",
        "16",
        "--batch",
        "2",
        "--seed",
        "7",
        "--out",
        path_str(&ckpt),
    ];

    let first = run(&args);
    assert_exit(&first, 0);
    let ckpt_a = std::fs::read(&ckpt).unwrap();
    let second = run(&args);
    assert_exit(&second, 0);
    let ckpt_b = std::fs::read(&ckpt).unwrap();

    assert_eq!(ckpt_a, ckpt_b, "same seed, same checkpoint bytes");
    assert_eq!(stdout_text(&first), stdout_text(&second), "same training log");
}

#[test]
fn train_resume_reaches_the_same_bytes_as_one_run() {
    let dir = TempDir::new().unwrap();
    let (cores_dir, manifest_path) = training_fixture(dir.path());
    let full = dir.path().join("full.ckpt");
    let halved = dir.path().join("halved.ckpt");
    let base_args = |out: &str, steps: &str| {
        vec![
            "train".to_string(),
            "--arch".into(),
            "123s-compact".into(),
            "--manifest".into(),
            path_str(&manifest_path).to_string(),
            "--cores".into(),
            path_str(&cores_dir).to_string(),
            "--steps".into(),
            steps.to_string(),
            "--val-interval".into(),
            "3".into(),
            "--patch".into(),
            "16".into(),
            "--batch".into(),
            "2".into(),
            "--seed".into(),
            "5".into(),
            "--out".into(),
            out.to_string(),
        ]
    };

    let out = cmd().args(base_args(path_str(&full), "6")).output().unwrap();
    assert_exit(&out, 0);

    let out = cmd().args(base_args(path_str(&halved), "3")).output().unwrap();
    assert_exit(&out, 0);
    let mut resume_args = base_args(path_str(&halved), "6");
    resume_args.push("--resume".into());
    let out = cmd().args(resume_args).output().unwrap();
    assert_exit(&out, 0);

    assert_eq!(
        std::fs::read(&full).unwrap(),
        std::fs::read(&halved).unwrap(),
        "3 steps + 3 resumed steps produce the 6-step checkpoint bit for bit"
    );
    assert_eq!(
        std::fs::read(dir.path().join("full.ckpt.best")).unwrap(),
        std::fs::read(dir.path().join("halved.ckpt.best")).unwrap()
    );
}

#[test]
fn train_flag_validation_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let (cores_dir, manifest_path) = training_fixture(dir.path());
    let ckpt = dir.path().join("model.ckpt");
    let base = [
        "--manifest",
        path_str(&manifest_path),
        "--cores",
        path_str(&cores_dir),
        "--out",
        path_str(&ckpt),
    ];

    // Unknown architecture preset.
    let mut args = vec!["train", "--arch", "resnet50"];
    args.extend_from_slice(&base);
    let out = run(&args);
    assert_exit(&out, 1);

    // Patch size violating the preset's input alignment.
    let mut args = vec!["train", "--arch", "123s-compact", "--patch", "20", "--steps", "1"];
    args.extend_from_slice(&base);
    let out = run(&args);
    assert_exit(&out, 1);
    assert!(stderr_text(&out).contains("alignment"), "stderr: {}", stderr_text(&out));

    // Missing manifest file is a runtime error, not usage.
    let out = run(&[
        "train",
        "--arch",
        "123s-compact",
        "--manifest",
        path_str(&dir.path().join("absent.tsv")),
        "--cores",
        path_str(&cores_dir),
        "--out",
        path_str(&ckpt),
    ]);
    assert_exit(&out, 2);
}

// ---------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------

#[test]
fn predict_with_zero_logit_checkpoint_writes_uniform_mid_gray() {
    let dir = TempDir::new().unwrap();
    let ckpt = dir.path().join("zero.ckpt");
    zero_logit_checkpoint(&ckpt);

    let image_path = dir.path().join("core.png");
    let mut image = ImageRGB::filled(40, 56, [180, 120, 160]);
    image.set_pixel(3, 5, [10, 200, 40]);
    save_rgb(&image, &image_path).unwrap();

    let out_path = dir.path().join("heatmap.png");
    let out = run(&[
        "predict",
        "--ckpt",
        path_str(&ckpt),
        "--image",
        path_str(&image_path),
        "--out",
        path_str(&out_path),
    ]);
    assert_exit(&out, 0);

    let heatmap = tmaseg::load_heatmap(&out_path).unwrap();
    assert_eq!((heatmap.height(), heatmap.width()), (40, 56), "input dimensions preserved");
    assert!(
        heatmap.data().iter().all(|&v| v == 128.0 / 255.0),
        "probability 0.5 everywhere quantizes to byte 128"
    );
}

#[test]
fn predict_geometry_flags_are_validated() {
    let dir = TempDir::new().unwrap();
    let ckpt = dir.path().join("zero.ckpt");
    zero_logit_checkpoint(&ckpt);
    let image_path = dir.path().join("core.png");
    save_rgb(&ImageRGB::filled(32, 32, [128, 128, 128]), &image_path).unwrap();
    let out_path = dir.path().join("heatmap.png");
    let base = [
        "predict",
        "--ckpt",
        path_str(&ckpt),
        "--image",
        path_str(&image_path),
        "--out",
        path_str(&out_path),
    ];

    for extra in [["--patch", "20"], ["--stride", "0"], ["--stride", "80"]] {
        let mut args = base.to_vec();
        args.extend_from_slice(&extra);
        let out = run(&args);
        assert_exit(&out, 1);
    }

    // Corrupt checkpoint file is a runtime error.
    let bad_ckpt = dir.path().join("bad.ckpt");
    std::fs::write(&bad_ckpt, b"not a checkpoint").unwrap();
    let mut args = base.to_vec();
    args[2] = path_str(&bad_ckpt);
    let out = run(&args);
    assert_exit(&out, 2);
}

// ---------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------

/// Cores + manifest + zero-logit checkpoint shared by evaluate tests.
fn evaluate_fixture(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let cores_dir = dir.join("cores");
    let ids = synth_cores(&cores_dir, 4, 64, 41);
    let manifest_path = dir.join("manifest.tsv");
    manifest_with(&ids, 1, 2, &manifest_path);
    let ckpt = dir.join("zero.ckpt");
    zero_logit_checkpoint(&ckpt);
    (cores_dir, manifest_path, ckpt)
}

fn evaluate_args<'a>(
    cores_dir: &'a Path,
    manifest_path: &'a Path,
    ckpt: &'a Path,
    report: &'a Path,
) -> Vec<&'a str> {
    vec![
        "evaluate",
        "--ckpt",
        path_str(ckpt),
        "--manifest",
        path_str(manifest_path),
        "--cores",
        path_str(cores_dir),
        "--split",
        "val",
        "--report",
        path_str(report),
    ]
}

#[test]
fn evaluate_sweep_prints_curve_and_writes_parsable_report() {
    let dir = TempDir::new().unwrap();
    let (cores_dir, manifest_path, ckpt) = evaluate_fixture(dir.path());
    let report_path = dir.path().join("report.tsv");

    let mut args = evaluate_args(&cores_dir, &manifest_path, &ckpt, &report_path);
    args.push("--sweep");
    let out = run(&args);
    assert_exit(&out, 0);

    let stdout = stdout_text(&out);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "threshold\tprecision\trecall\tf1", "curve header");
    assert_eq!(lines.len(), 1 + 101 + 2, "curve, chosen threshold, macro row:\n{stdout}");
    // Probabilities are exactly 0.5, so the lowest threshold wins the
    // tie among all thresholds <= 0.5.
    assert_eq!(lines[102], "threshold\t0.00");
    assert!(lines[103].starts_with("macro\t"));

    let report = parse_report(&std::fs::read_to_string(&report_path).unwrap()).expect("parses");
    assert_eq!(report.model, "123s-compact");
    assert_eq!(report.threshold, 0.0);
    assert_eq!(report.cores.len(), 2, "two validation cores");
    // Everything is predicted positive: perfect recall on each core.
    for core in &report.cores {
        assert_eq!(core.recall, 1.0);
        assert_eq!(core.counts.false_neg, 0);
        assert_eq!(core.counts.true_neg, 0);
    }
}

#[test]
fn evaluate_fixed_threshold_skips_the_curve() {
    let dir = TempDir::new().unwrap();
    let (cores_dir, manifest_path, ckpt) = evaluate_fixture(dir.path());
    let report_path = dir.path().join("report.tsv");

    let mut args = evaluate_args(&cores_dir, &manifest_path, &ckpt, &report_path);
    args.extend_from_slice(&["--threshold", "0.75"]);
    let out = run(&args);
    assert_exit(&out, 0);

    let stdout = stdout_text(&out);
    assert_eq!(stdout.lines().count(), 2, "threshold + macro lines only:\n{stdout}");
    assert!(stdout.starts_with("threshold\t0.75\n"));
    // At 0.75 nothing is predicted positive (all probabilities 0.5).
    let report = parse_report(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    for core in &report.cores {
        assert_eq!(core.counts.true_pos + core.counts.false_pos, 0);
    }
}

#[test]
fn evaluate_flag_conflicts_and_bad_values_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let (cores_dir, manifest_path, ckpt) = evaluate_fixture(dir.path());
    let report_path = dir.path().join("report.tsv");
    let base = evaluate_args(&cores_dir, &manifest_path, &ckpt, &report_path);

    for extra in [
        vec!["--sweep", "--threshold", "0.4"],
        vec!["--threshold", "1.5"],
        vec!["--threads", "0"],
        vec!["--stride", "0"],
    ] {
        let mut args = base.clone();
        args.extend_from_slice(&extra);
        let out = run(&args);
        assert_exit(&out, 1);
    }

    let mut args = base.clone();
    args[8] = "holdout"; // not train/val/test
    let out = run(&args);
    assert_exit(&out, 1);
    assert!(stderr_text(&out).contains("--split"));
}

#[test]
fn evaluate_empty_split_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    let cores_dir = dir.path().join("cores");
    let ids = synth_cores(&cores_dir, 2, 64, 17);
    let manifest_path = dir.path().join("manifest.tsv");
    manifest_with(&ids, 1, 1, &manifest_path); // no test cores
    let ckpt = dir.path().join("zero.ckpt");
    zero_logit_checkpoint(&ckpt);
    let report_path = dir.path().join("report.tsv");

    let mut args = evaluate_args(&cores_dir, &manifest_path, &ckpt, &report_path);
    args[8] = "test";
    let out = run(&args);
    assert_exit(&out, 2);
    assert!(stderr_text(&out).contains("test"), "stderr: {}", stderr_text(&out));
}

#[test]
fn evaluate_thread_count_comes_from_flag_then_env_and_never_changes_bytes() {
    let dir = TempDir::new().unwrap();
    let (cores_dir, manifest_path, ckpt) = evaluate_fixture(dir.path());
    let report_path = dir.path().join("report.tsv");
    let base = evaluate_args(&cores_dir, &manifest_path, &ckpt, &report_path);

    let mut args = base.clone();
    args.extend_from_slice(&["--threads", "1"]);
    let out = run(&args);
    assert_exit(&out, 0);
    let single = std::fs::read(&report_path).unwrap();

    let mut args = base.clone();
    args.extend_from_slice(&["--threads", "3"]);
    let out = run(&args);
    assert_exit(&out, 0);
    assert_eq!(std::fs::read(&report_path).unwrap(), single, "--threads 3 output identical");

    // Environment variable as the default…
    let out = cmd().args(&base).env("TMASEG_THREADS", "2").output().unwrap();
    assert_exit(&out, 0);
    assert_eq!(std::fs::read(&report_path).unwrap(), single, "env-threaded output identical");

    // …but an invalid value is a usage error when consulted…
    let out = cmd().args(&base).env("TMASEG_THREADS", "lots").output().unwrap();
    assert_exit(&out, 1);
    assert!(stderr_text(&out).contains("TMASEG_THREADS"));

    // …and ignored when the flag supplies the value.
    let mut args = base.clone();
    args.extend_from_slice(&["--threads", "2"]);
    let out = cmd().args(&args).env("TMASEG_THREADS", "lots").output().unwrap();
    assert_exit(&out, 0);
}
