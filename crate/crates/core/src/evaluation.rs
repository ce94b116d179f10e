//! Whole-core prediction and pixel-wise evaluation.
//!
//! [`predict_core`] turns a trained network into a full-resolution
//! probability map for one core: the core is covered by a patch grid
//! (edge-replicated up to the patch size when smaller), every patch runs
//! through the network in eval mode, sigmoids of the logits are stitched
//! by averaging overlaps, and the result is cropped back to the core's
//! exact dimensions.
//!
//! Metrics compare such heatmaps against binary targets pixel by pixel,
//! ignoring pixels whose target is `-1`. A pixel counts as positive when
//! its probability is greater than or equal to the threshold. Per-core
//! precision/recall/F1 aggregate into unweighted (macro) means, and
//! [`sweep_threshold`] scans 0.00..=1.00 in steps of 0.01 for the
//! operating point with the best macro F1 (lowest threshold on ties).

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::annotation::BinaryTarget;
use crate::dataset::{CorePixels, CoreStore, DatasetError, Split, SplitManifest};
use crate::graph::{stable_sigmoid, Mode};
use crate::imaging::{Heatmap, ImageRGB};
use crate::models::{ModelError, Network};
use crate::tensor::{Real, Tensor};
use crate::tiling::{plan_grid, stitch, TilingError};

/// Patches per forward pass when covering a core.
const PREDICT_CHUNK: usize = 4;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{} split has no cores", split.name())]
    EmptySplit { split: Split },
    #[error("no predictions to aggregate")]
    NoPredictions,
    #[error("invalid prediction geometry: {0}")]
    InvalidGeometry(String),
    #[error("{what}: expected {}x{}, got {}x{}", expected.0, expected.1, got.0, got.1)]
    DimensionMismatch { what: &'static str, expected: (usize, usize), got: (usize, usize) },
    #[error("cannot parse report at line {line}: {detail}")]
    ParseReport { line: usize, detail: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tiling(#[from] TilingError),
}

/// Pixel-wise confusion counts over the non-ignored pixels of one or more
/// cores. The four counts always sum to the number of evaluated pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PixelCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl PixelCounts {
    /// Number of evaluated (non-ignored) pixels.
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    /// Pools another set of counts into this one.
    pub fn absorb(&mut self, other: &PixelCounts) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
        self.true_neg += other.true_neg;
    }
}

/// Confusion counts of `heatmap` against `target` at `threshold`.
///
/// A pixel is predicted positive iff its probability is `>= threshold`;
/// pixels with target `-1` are skipped entirely.
pub fn pixel_counts(
    heatmap: &Heatmap,
    target: &BinaryTarget,
    threshold: f64,
) -> Result<PixelCounts, EvalError> {
    if (heatmap.height(), heatmap.width()) != (target.height(), target.width()) {
        return Err(EvalError::DimensionMismatch {
            what: "heatmap does not match target",
            expected: (target.height(), target.width()),
            got: (heatmap.height(), heatmap.width()),
        });
    }
    let mut counts = PixelCounts::default();
    for (&p, &t) in heatmap.data().iter().zip(target.values()) {
        if t == -1 {
            continue;
        }
        let positive = (p as f64) >= threshold;
        match (positive, t == 1) {
            (true, true) => counts.true_pos += 1,
            (true, false) => counts.false_pos += 1,
            (false, true) => counts.false_neg += 1,
            (false, false) => counts.true_neg += 1,
        }
    }
    Ok(counts)
}

/// Precision, recall, and F1 from confusion counts.
///
/// When a metric's denominator is zero it is 0, except that counts with
/// no positives at all (predicted or actual) score a perfect (1, 1, 1):
/// correctly predicting "nothing here" on a negative-only core is not a
/// failure.
pub fn prf1(counts: &PixelCounts) -> (f64, f64, f64) {
    let predicted = counts.true_pos + counts.false_pos;
    let actual = counts.true_pos + counts.false_neg;
    if predicted == 0 && actual == 0 {
        return (1.0, 1.0, 1.0);
    }
    let p = if predicted == 0 { 0.0 } else { counts.true_pos as f64 / predicted as f64 };
    let r = if actual == 0 { 0.0 } else { counts.true_pos as f64 / actual as f64 };
    // 2PR/(P+R) computed directly from counts (algebraically identical,
    // one rounding); when P + R = 0 the numerator is 0 too.
    let f1 = 2.0 * counts.true_pos as f64 / (predicted + actual) as f64;
    (p, r, f1)
}

/// Covers a core with a patch grid and runs `forward` over every patch,
/// stitching sigmoids of the logits into a full-core probability map.
///
/// Cores smaller than the patch are edge-replicated up to patch size and
/// the result is cropped back, so the heatmap always matches the core
/// pixel for pixel. `forward` maps an `[n, p, p, 3]` batch to `[n, p, p, 1]`
/// logits.
pub fn predict_map<F>(
    forward: F,
    core: &ImageRGB,
    patch: usize,
    stride: usize,
) -> Result<Heatmap, EvalError>
where
    F: Fn(&Tensor) -> Result<Tensor, EvalError>,
{
    if patch == 0 || stride == 0 || stride > patch {
        return Err(EvalError::InvalidGeometry(format!(
            "need 1 <= stride <= patch, got patch {patch}, stride {stride}"
        )));
    }
    let (h, w) = (core.height(), core.width());
    let (ph, pw) = (h.max(patch), w.max(patch));

    // Normalized padded pixels: byte/255 - 0.5, edges replicated.
    let mut padded = Vec::with_capacity(ph * pw * 3);
    for y in 0..ph {
        for x in 0..pw {
            let px = core.pixel(y.min(h - 1), x.min(w - 1));
            padded.extend(px.iter().map(|&c| c as Real / 255.0 - 0.5));
        }
    }

    let grid = plan_grid(ph, pw, patch, stride)?;
    let mut maps: Vec<Vec<Real>> = Vec::with_capacity(grid.origins.len());
    for origins in grid.origins.chunks(PREDICT_CHUNK) {
        let n = origins.len();
        let mut batch = Vec::with_capacity(n * patch * patch * 3);
        for &(oy, ox) in origins {
            for y in oy..oy + patch {
                let row = (y * pw + ox) * 3;
                batch.extend_from_slice(&padded[row..row + patch * 3]);
            }
        }
        let logits = forward(&Tensor::from_vec(&[n, patch, patch, 3], batch))?;
        let expected = [n, patch, patch, 1];
        if logits.shape() != expected {
            return Err(EvalError::InvalidGeometry(format!(
                "forward returned shape {:?}, expected {:?}",
                logits.shape(),
                expected
            )));
        }
        for sample in logits.data().chunks(patch * patch) {
            maps.push(sample.iter().map(|&z| stable_sigmoid(z)).collect());
        }
    }
    let full = stitch(&grid, &maps)?;
    if (ph, pw) == (h, w) {
        return Ok(full);
    }
    let mut cropped = Vec::with_capacity(h * w);
    for y in 0..h {
        cropped.extend_from_slice(&full.data()[y * pw..y * pw + w]);
    }
    Ok(Heatmap::from_raw(h, w, cropped))
}

/// Full-core cancer-probability map from a trained network (eval mode).
///
/// `patch` must be a positive multiple of the network's input alignment
/// and `stride` in `1..=patch`.
pub fn predict_core(
    net: &Network,
    core: &ImageRGB,
    patch: usize,
    stride: usize,
) -> Result<Heatmap, EvalError> {
    if patch == 0 || patch % net.alignment != 0 {
        return Err(EvalError::InvalidGeometry(format!(
            "patch size must be a positive multiple of {} (the {} input alignment), got {patch}",
            net.alignment,
            net.config.arch.name()
        )));
    }
    predict_map(|x| Ok(net.forward(x, Mode::Eval)?), core, patch, stride)
}

/// Runs `f(0..n)` on `threads` worker threads, returning results in index
/// order. Each call must be independent; work is handed out dynamically,
/// so the output is identical for any thread count.
pub fn parallel_map<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    assert!(threads >= 1, "need at least one thread");
    if threads == 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let f = &f;
    let next = &next;
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let collected: Vec<Vec<(usize, T)>> = std::thread::scope(|scope| {
        let workers: Vec<_> = (0..threads.min(n))
            .map(|_| {
                scope.spawn(move || {
                    let mut acc = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= n {
                            break;
                        }
                        acc.push((i, f(i)));
                    }
                    acc
                })
            })
            .collect();
        workers.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    for batch in collected {
        for (i, value) in batch {
            slots[i] = Some(value);
        }
    }
    slots.into_iter().map(|s| s.expect("every index filled")).collect()
}

/// One core's heatmap next to its ground truth.
#[derive(Debug, Clone)]
pub struct CorePrediction {
    pub core_id: String,
    pub heatmap: Heatmap,
    pub pixels: Arc<CorePixels>,
}

/// Predicts every core of one split, in manifest (core-id) order.
///
/// Cores are distributed over `threads` worker threads; results are
/// aggregated back in core-id order, so the output is independent of the
/// thread count.
pub fn predict_split(
    net: &Network,
    manifest: &SplitManifest,
    split: Split,
    store: &CoreStore,
    patch: usize,
    stride: usize,
    threads: usize,
) -> Result<Vec<CorePrediction>, EvalError> {
    let ids = manifest.split_ids(split);
    if ids.is_empty() {
        return Err(EvalError::EmptySplit { split });
    }
    parallel_map(ids.len(), threads, |i| -> Result<CorePrediction, EvalError> {
        let core_id = ids[i].to_string();
        let pixels = store.load(&core_id)?;
        let heatmap = predict_core(net, &pixels.image, patch, stride)?;
        Ok(CorePrediction { core_id, heatmap, pixels })
    })
    .into_iter()
    .collect()
}

/// Per-core metrics at one operating threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreMetrics {
    pub core_id: String,
    pub counts: PixelCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Evaluation of one model over one set of cores at a fixed threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub threshold: f64,
    /// Per-core rows in core-id order.
    pub cores: Vec<CoreMetrics>,
    /// Unweighted means of the per-core metrics.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Scores predictions at `threshold`, producing per-core rows and their
/// macro averages.
pub fn report_at(
    predictions: &[CorePrediction],
    threshold: f64,
    model: &str,
) -> Result<EvalReport, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::NoPredictions);
    }
    let mut cores = Vec::with_capacity(predictions.len());
    for pred in predictions {
        let counts = pixel_counts(&pred.heatmap, &pred.pixels.target, threshold)?;
        let (precision, recall, f1) = prf1(&counts);
        cores.push(CoreMetrics { core_id: pred.core_id.clone(), counts, precision, recall, f1 });
    }
    cores.sort_by(|a, b| a.core_id.cmp(&b.core_id));
    let n = cores.len() as f64;
    Ok(EvalReport {
        model: model.to_string(),
        threshold,
        macro_precision: cores.iter().map(|c| c.precision).sum::<f64>() / n,
        macro_recall: cores.iter().map(|c| c.recall).sum::<f64>() / n,
        macro_f1: cores.iter().map(|c| c.f1).sum::<f64>() / n,
        cores,
    })
}

/// One point of a threshold sweep: macro metrics at `threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scans thresholds 0.00..=1.00 in steps of 0.01 and returns the full
/// macro-metric curve plus the threshold with the highest macro F1
/// (lowest such threshold on ties).
pub fn sweep_threshold(
    predictions: &[CorePrediction],
) -> Result<(f64, Vec<SweepPoint>), EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::NoPredictions);
    }
    let mut curve = Vec::with_capacity(101);
    let mut best = (0.0f64, f64::NEG_INFINITY);
    for i in 0..=100u32 {
        let threshold = i as f64 / 100.0;
        let mut sums = (0.0f64, 0.0f64, 0.0f64);
        for pred in predictions {
            let counts = pixel_counts(&pred.heatmap, &pred.pixels.target, threshold)?;
            let (p, r, f1) = prf1(&counts);
            sums = (sums.0 + p, sums.1 + r, sums.2 + f1);
        }
        let n = predictions.len() as f64;
        let point = SweepPoint {
            threshold,
            precision: sums.0 / n,
            recall: sums.1 / n,
            f1: sums.2 / n,
        };
        if point.f1 > best.1 {
            best = (threshold, point.f1);
        }
        curve.push(point);
    }
    Ok((best.0, curve))
}

/// The sweep curve as `threshold<TAB>precision<TAB>recall<TAB>f1` lines.
pub fn curve_to_string(curve: &[SweepPoint]) -> String {
    let mut out = String::from("threshold\tprecision\trecall\tf1\n");
    for p in curve {
        out.push_str(&format!(
            "{:.2}\t{}\t{}\t{}\n",
            p.threshold,
            format_metric(p.precision),
            format_metric(p.recall),
            format_metric(p.f1)
        ));
    }
    out
}

/// Two-decimal metric with halves rounding up: 0.805 -> "0.81".
pub fn format_metric(x: f64) -> String {
    format!("{:.2}", (x * 100.0 + 0.5).floor() / 100.0)
}

/// Renders a report as a tab-separated text table with two-decimal
/// metrics (halves round up). [`parse_report`] reads it back.
pub fn report_to_string(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("model\t{}\n", report.model));
    out.push_str(&format!("threshold\t{:.2}\n", report.threshold));
    out.push_str("core\tprecision\trecall\tf1\ttp\tfp\tfn\ttn\n");
    for c in &report.cores {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            c.core_id,
            format_metric(c.precision),
            format_metric(c.recall),
            format_metric(c.f1),
            c.counts.true_pos,
            c.counts.false_pos,
            c.counts.false_neg,
            c.counts.true_neg,
        ));
    }
    out.push_str(&format!(
        "macro\t{}\t{}\t{}\n",
        format_metric(report.macro_precision),
        format_metric(report.macro_recall),
        format_metric(report.macro_f1)
    ));
    out
}

/// Parses a report written by [`report_to_string`]. Metrics come back at
/// the table's two-decimal resolution.
pub fn parse_report(text: &str) -> Result<EvalReport, EvalError> {
    let err = |line: usize, detail: &str| EvalError::ParseReport {
        line,
        detail: detail.to_string(),
    };
    let mut lines = text.lines().enumerate();
    let mut expect = |prefix: &str| -> Result<(usize, String), EvalError> {
        let (i, line) = lines.next().ok_or_else(|| err(0, "unexpected end of report"))?;
        let (key, value) = line
            .split_once('\t')
            .ok_or_else(|| err(i + 1, "expected a tab-separated header line"))?;
        if key != prefix {
            return Err(err(i + 1, &format!("expected `{prefix}`, found `{key}`")));
        }
        Ok((i + 1, value.to_string()))
    };
    let (_, model) = expect("model")?;
    let (tline, tvalue) = expect("threshold")?;
    let threshold: f64 =
        tvalue.parse().map_err(|_| err(tline, "threshold is not a number"))?;
    let (hline, hline_text) = lines.next().ok_or_else(|| err(0, "missing column header"))?;
    if hline_text != "core\tprecision\trecall\tf1\ttp\tfp\tfn\ttn" {
        return Err(err(hline + 1, "unexpected column header"));
    }

    let mut cores = Vec::new();
    let mut macro_row = None;
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let metric = |f: &str, what: &str| -> Result<f64, EvalError> {
            f.parse::<f64>().map_err(|_| err(i + 1, &format!("{what} is not a number")))
        };
        if fields[0] == "macro" {
            if fields.len() != 4 {
                return Err(err(i + 1, "macro row needs 4 fields"));
            }
            macro_row = Some((
                metric(fields[1], "macro precision")?,
                metric(fields[2], "macro recall")?,
                metric(fields[3], "macro f1")?,
            ));
            continue;
        }
        if macro_row.is_some() {
            return Err(err(i + 1, "unexpected row after the macro row"));
        }
        if fields.len() != 8 {
            return Err(err(i + 1, "core row needs 8 fields"));
        }
        let count = |f: &str, what: &str| -> Result<u64, EvalError> {
            f.parse::<u64>().map_err(|_| err(i + 1, &format!("{what} is not a count")))
        };
        cores.push(CoreMetrics {
            core_id: fields[0].to_string(),
            precision: metric(fields[1], "precision")?,
            recall: metric(fields[2], "recall")?,
            f1: metric(fields[3], "f1")?,
            counts: PixelCounts {
                true_pos: count(fields[4], "tp")?,
                false_pos: count(fields[5], "fp")?,
                false_neg: count(fields[6], "fn")?,
                true_neg: count(fields[7], "tn")?,
            },
        });
    }
    let (macro_precision, macro_recall, macro_f1) =
        macro_row.ok_or_else(|| err(0, "missing macro row"))?;
    Ok(EvalReport { model, threshold, cores, macro_precision, macro_recall, macro_f1 })
}
