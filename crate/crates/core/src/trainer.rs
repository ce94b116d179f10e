//! Training loop, validation, and binary checkpoints.
//!
//! [`train`] runs single-threaded Adam optimization of a segmentation
//! network on randomly sampled patches: each step draws one training core,
//! samples a batch of patches from it, runs a forward/backward pass in
//! train mode, folds the batch-norm moments into the running statistics,
//! and applies one Adam update. All randomness flows from per-step streams
//! derived from the training seed, so a run is a pure function of its
//! configuration and data — repeating it reproduces every loss and every
//! checkpoint byte for byte, and resuming from a step-`k` checkpoint for
//! `k` more steps matches an uninterrupted `2k`-step run exactly.
//!
//! The network is mutated only by the calling thread, and checkpoints are
//! written between steps, never mid-update.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{sample_patches_from, CoreStore, DatasetError, Split, SplitManifest};
use crate::graph::{Graph, GraphError, Mode};
use crate::models::{build_model, Arch, ModelConfig, ModelError, Network};
use crate::params::{adam_defaults, ParamError, ParameterSet};
use crate::seeding::derive_seed;
use crate::tensor::{Real, Tensor};
use crate::tiling::{extract, plan_grid, Patch, TilingError};

/// Checkpoint format revision this build reads and writes.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Leading bytes of every checkpoint file.
pub const CHECKPOINT_MAGIC: [u8; 8] = *b"TMASEG01";

const SCALAR_WIDTH: u8 = std::mem::size_of::<Real>() as u8;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{} split has no cores", split.name())]
    EmptySplit { split: Split },
    #[error("not a checkpoint file: bad magic")]
    BadMagic,
    #[error("unsupported checkpoint version {got}; this build reads version {CHECKPOINT_VERSION}")]
    VersionUnsupported { got: u32 },
    #[error("checkpoint file is truncated")]
    TruncatedFile,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint stores {file}-byte scalars but this build uses {build}-byte scalars")]
    ScalarWidth { file: u8, build: u8 },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tiling(#[from] TilingError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// Everything one training run depends on besides the data itself.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Architecture preset name, e.g. `unet-compact` (see
    /// [`ModelConfig::preset`]).
    pub arch: String,
    /// Square patch side in pixels; must be a positive multiple of the
    /// architecture's input alignment and no larger than any core.
    pub patch: usize,
    /// Patches per optimization step, at least 1.
    pub batch: usize,
    /// Total optimization steps the run ends at (absolute, so resuming a
    /// step-`k` checkpoint with `steps = 2k` trains `k` more steps).
    pub steps: u64,
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub epsilon: Real,
    /// Seed for parameter initialization and all patch sampling.
    pub seed: u64,
    /// Apply a random dihedral transform to every sampled patch.
    pub augment: bool,
    /// Validate (and persist checkpoints) every this many steps.
    pub val_interval: u64,
    /// Path the latest checkpoint is written to; the best-validation
    /// checkpoint lives next to it (see [`best_checkpoint_path`]).
    pub out: PathBuf,
}

impl TrainConfig {
    /// Defaults sized for compact presets on a CPU: batch 4, 2000 steps,
    /// 48 px patches, validation every 200 steps, Adam defaults,
    /// augmentation on.
    pub fn new(arch: &str, seed: u64, out: PathBuf) -> TrainConfig {
        TrainConfig {
            arch: arch.to_string(),
            patch: 48,
            batch: 4,
            steps: 2000,
            lr: adam_defaults::LR,
            beta1: adam_defaults::BETA1,
            beta2: adam_defaults::BETA2,
            epsilon: adam_defaults::EPSILON,
            seed,
            augment: true,
            val_interval: 200,
            out,
        }
    }

    fn validate(&self, alignment: usize) -> Result<(), TrainerError> {
        let bad = |msg: String| Err(TrainerError::InvalidConfig(msg));
        if self.steps < 1 {
            return bad("steps must be at least 1".into());
        }
        if self.batch < 1 {
            return bad("batch must be at least 1".into());
        }
        if self.val_interval < 1 {
            return bad("validation interval must be at least 1".into());
        }
        if self.patch == 0 || self.patch % alignment != 0 {
            return bad(format!(
                "patch size must be a positive multiple of {alignment} (the {} input alignment), got {}",
                self.arch, self.patch
            ));
        }
        Ok(())
    }
}

/// Path of the best-validation checkpoint for a latest-checkpoint path:
/// the same file name with `.best` appended.
pub fn best_checkpoint_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_os_string();
    name.push(".best");
    PathBuf::from(name)
}

/// A persisted training state: the model, its optimizer state, and enough
/// metadata to resume or evaluate it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Architecture and sizing of the stored network.
    pub model: ModelConfig,
    /// Seed of the training run that produced this checkpoint.
    pub train_seed: u64,
    /// Lowest validation loss seen so far; infinity before any validation.
    pub best_val_loss: f64,
    /// Parameters, batch-norm statistics, Adam moments, and the step count.
    pub params: ParameterSet,
}

impl Checkpoint {
    /// Rebuilds a runnable network from the stored configuration and
    /// parameters.
    pub fn network(&self) -> Network {
        Network {
            config: self.model.clone(),
            params: self.params.clone(),
            alignment: self.model.arch.alignment(),
        }
    }

    /// Serializes to the binary checkpoint format (little-endian
    /// throughout). The parameter table is name-ordered, so equal states
    /// serialize to equal bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_str(&mut out, self.model.arch.name());
        put_u64(&mut out, self.model.base_channels as u64);
        put_f64(&mut out, self.model.depth_scale);
        put_u64(&mut out, self.model.growth_rate as u64);
        put_u64(&mut out, self.model.seed);
        put_u64(&mut out, self.train_seed);
        put_f64(&mut out, self.best_val_loss);
        put_u64(&mut out, self.params.step());
        put_u64(&mut out, self.params.len() as u64);
        for (name, entry) in self.params.entries() {
            put_str(&mut out, name);
            out.push(entry.trainable as u8);
            out.push(SCALAR_WIDTH);
            put_u32(&mut out, entry.value.rank() as u32);
            for &extent in entry.value.shape() {
                put_u64(&mut out, extent as u64);
            }
            put_reals(&mut out, entry.value.data());
            if entry.trainable {
                put_reals(&mut out, &entry.m);
                put_reals(&mut out, &entry.v);
            }
        }
        out
    }

    /// Decodes a checkpoint, rejecting wrong magic, unknown versions,
    /// truncation, scalar-width mismatches, and trailing garbage.
    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, TrainerError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(TrainerError::BadMagic);
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(TrainerError::VersionUnsupported { got: version });
        }
        let arch_name = r.str()?;
        let arch = Arch::from_name(&arch_name)
            .ok_or_else(|| TrainerError::Corrupt(format!("unknown architecture `{arch_name}`")))?;
        let model = ModelConfig {
            arch,
            base_channels: r.u64()? as usize,
            depth_scale: r.f64()?,
            growth_rate: r.u64()? as usize,
            seed: r.u64()?,
        };
        let train_seed = r.u64()?;
        let best_val_loss = r.f64()?;
        let step = r.u64()?;
        let count = r.u64()?;
        let mut params = ParameterSet::new();
        let mut prev_name: Option<String> = None;
        for _ in 0..count {
            let name = r.str()?;
            if prev_name.as_deref() >= Some(name.as_str()) {
                return Err(TrainerError::Corrupt(format!(
                    "parameter table not strictly name-ordered at `{name}`"
                )));
            }
            let trainable = match r.u8()? {
                0 => false,
                1 => true,
                other => {
                    return Err(TrainerError::Corrupt(format!(
                        "bad trainable flag {other} for `{name}`"
                    )))
                }
            };
            let width = r.u8()?;
            if width != SCALAR_WIDTH {
                return Err(TrainerError::ScalarWidth { file: width, build: SCALAR_WIDTH });
            }
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let numel = shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e)).ok_or_else(
                || TrainerError::Corrupt(format!("extent overflow for `{name}`")),
            )?;
            let value = Tensor::from_vec(&shape, r.reals(numel)?);
            if trainable {
                params.insert_trainable(&name, value);
                let entry = params.entry_mut(&name).expect("just inserted");
                entry.m = r.reals(numel)?;
                entry.v = r.reals(numel)?;
            } else {
                params.insert_buffer(&name, value);
            }
            prev_name = Some(name);
        }
        if r.pos != bytes.len() {
            return Err(TrainerError::Corrupt(format!(
                "{} trailing bytes after checkpoint payload",
                bytes.len() - r.pos
            )));
        }
        params.set_step(step);
        Ok(Checkpoint { model, train_seed, best_val_loss, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainerError> {
        std::fs::write(path, self.to_bytes())
            .map_err(|source| TrainerError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Checkpoint, TrainerError> {
        let bytes = std::fs::read(path)
            .map_err(|source| TrainerError::Io { path: path.to_path_buf(), source })?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_reals(out: &mut Vec<u8>, data: &[Real]) {
    for &x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainerError> {
        let end = self.pos.checked_add(n).ok_or(TrainerError::TruncatedFile)?;
        if end > self.buf.len() {
            return Err(TrainerError::TruncatedFile);
        }
        let slice = &self.buf[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, TrainerError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, TrainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, TrainerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, TrainerError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String, TrainerError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| TrainerError::Corrupt("non-UTF-8 name".into()))
    }

    fn reals(&mut self, numel: usize) -> Result<Vec<Real>, TrainerError> {
        let width = SCALAR_WIDTH as usize;
        let need = numel.checked_mul(width).ok_or(TrainerError::TruncatedFile)?;
        let bytes = self.take(need)?;
        Ok(bytes
            .chunks_exact(width)
            .map(|c| Real::from_le_bytes(c.try_into().expect("scalar width")))
            .collect())
    }
}

/// What [`train`] hands back besides the files it wrote.
#[derive(Debug)]
pub struct TrainReport {
    /// State after the final step (also written to `cfg.out`).
    pub checkpoint: Checkpoint,
    /// `(step, loss)` for every optimization step this call ran.
    pub train_losses: Vec<(u64, Real)>,
    /// `(step, loss)` for every validation this call ran.
    pub val_losses: Vec<(u64, Real)>,
}

/// Stacks patches into `[n, p, p, 3]` input, `[n, p, p, 1]` target, and
/// `[n, p, p, 1]` weight tensors.
fn stack_batch(patches: &[Patch]) -> (Tensor, Tensor, Tensor) {
    let n = patches.len();
    let (h, w) = (patches[0].height, patches[0].width);
    let mut xs = Vec::with_capacity(n * h * w * 3);
    let mut ys = Vec::with_capacity(n * h * w);
    let mut ws = Vec::with_capacity(n * h * w);
    for p in patches {
        debug_assert_eq!((p.height, p.width), (h, w));
        xs.extend_from_slice(p.image.data());
        ys.extend(p.target.iter().map(|&t| if t == 1 { 1.0 as Real } else { 0.0 }));
        ws.extend_from_slice(&p.weight);
    }
    (
        Tensor::from_vec(&[n, h, w, 3], xs),
        Tensor::from_vec(&[n, h, w, 1], ys),
        Tensor::from_vec(&[n, h, w, 1], ws),
    )
}

/// Stable binary cross-entropy of one logit against a 0/1 target.
fn bce_logit(z: Real, y: Real) -> Real {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Weighted mean cross-entropy of a network over one split, in eval mode.
///
/// Every core in the split is covered by a deterministic non-overlapping
/// grid of `patch`-sized tiles (the final row/column is pulled in to stay
/// inside the core, as in [`plan_grid`] with stride = patch). Tiles run
/// through the network in chunks of `batch`; ignored pixels carry zero
/// weight. Returns 0 when the split has no annotated pixels at all.
pub fn validate(
    net: &Network,
    manifest: &SplitManifest,
    split: Split,
    store: &CoreStore,
    patch: usize,
    batch: usize,
) -> Result<Real, TrainerError> {
    let ids = manifest.split_ids(split);
    if ids.is_empty() {
        return Err(TrainerError::EmptySplit { split });
    }
    assert!(batch >= 1, "batch must be at least 1");
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for id in ids {
        let core = store.load(id)?;
        let grid = plan_grid(core.image.height(), core.image.width(), patch, patch)?;
        let patches = extract(&core.image, &core.target, &grid)?;
        for chunk in patches.chunks(batch) {
            let (x, y, w) = stack_batch(chunk);
            let z = net.forward(&x, Mode::Eval)?;
            for ((&zi, &yi), &wi) in z.data().iter().zip(y.data()).zip(w.data()) {
                if wi != 0.0 {
                    num += (wi * bce_logit(zi, yi)) as f64;
                    den += wi as f64;
                }
            }
        }
    }
    Ok(if den > 0.0 { (num / den) as Real } else { 0.0 })
}

/// Runs (or resumes) one training run. See the module docs for the loop
/// structure and determinism guarantees.
///
/// A fresh run builds the model from `cfg.arch` seeded with `cfg.seed`.
/// With `resume`, the checkpoint's model and optimizer state continue
/// training, and its architecture and training seed must match `cfg`;
/// `cfg.steps` stays absolute, so a step-`k` checkpoint trains
/// `cfg.steps - k` more steps.
///
/// Writes the latest checkpoint to `cfg.out` at every validation and at
/// the end, and the best-validation checkpoint next to it whenever
/// validation improves. Logs one `step<TAB>loss` line per step and a
/// `# step N val L` comment line per validation to `log`.
pub fn train(
    cfg: &TrainConfig,
    manifest: &SplitManifest,
    store: &CoreStore,
    resume: Option<Checkpoint>,
    log: &mut dyn Write,
) -> Result<TrainReport, TrainerError> {
    let model_cfg = ModelConfig::preset(&cfg.arch, cfg.seed)?;
    cfg.validate(model_cfg.arch.alignment())?;
    let train_ids = manifest.split_ids(Split::Train);
    if train_ids.is_empty() {
        return Err(TrainerError::EmptySplit { split: Split::Train });
    }
    if manifest.split_ids(Split::Val).is_empty() {
        return Err(TrainerError::EmptySplit { split: Split::Val });
    }

    let (mut net, mut best_val_loss) = match resume {
        Some(ckpt) => {
            if ckpt.model.arch != model_cfg.arch {
                return Err(TrainerError::InvalidConfig(format!(
                    "resume checkpoint holds a {} network but the config asks for {}",
                    ckpt.model.arch.name(),
                    model_cfg.arch.name()
                )));
            }
            if ckpt.train_seed != cfg.seed {
                return Err(TrainerError::InvalidConfig(format!(
                    "resume checkpoint was trained with seed {} but the config says {}",
                    ckpt.train_seed, cfg.seed
                )));
            }
            if ckpt.params.step() >= cfg.steps {
                return Err(TrainerError::InvalidConfig(format!(
                    "checkpoint is already at step {} of {}",
                    ckpt.params.step(),
                    cfg.steps
                )));
            }
            let best = ckpt.best_val_loss;
            (ckpt.network(), best)
        }
        None => (build_model(&model_cfg)?, f64::INFINITY),
    };

    let best_path = best_checkpoint_path(&cfg.out);
    let snapshot = |net: &Network, best: f64| Checkpoint {
        model: net.config.clone(),
        train_seed: cfg.seed,
        best_val_loss: best,
        params: net.params.clone(),
    };

    let mut train_losses = Vec::new();
    let mut val_losses = Vec::new();
    let start = net.params.step();
    for step in start + 1..=cfg.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, step));
        let core_id = train_ids[rng.random_range(0..train_ids.len())];
        let sample_seed: u64 = rng.random();
        let core = store.load(core_id)?;
        let patches = sample_patches_from(
            &core.image,
            &core.target,
            cfg.batch,
            cfg.patch,
            sample_seed,
            cfg.augment,
        )?;
        let (x, y, w) = stack_batch(&patches);

        let mut g = Graph::new();
        let input = g.input(x);
        let logits = net.forward_graph(&mut g, input, Mode::Train)?;
        let loss_id = g.bce_mean(logits, &y, &w)?;
        let loss = g.value(loss_id).data()[0];
        net.params.zero_grads();
        g.backward(loss_id, &mut net.params)?;
        g.commit_bn_stats(&mut net.params);
        net.params.adam_step(cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon)?;

        writeln!(log, "{step}\t{loss}")
            .map_err(|source| TrainerError::Io { path: PathBuf::from("<log>"), source })?;
        train_losses.push((step, loss));

        if step % cfg.val_interval == 0 {
            let val = validate(&net, manifest, Split::Val, store, cfg.patch, cfg.batch)?;
            writeln!(log, "# step {step} val {val}")
                .map_err(|source| TrainerError::Io { path: PathBuf::from("<log>"), source })?;
            val_losses.push((step, val));
            if (val as f64) < best_val_loss {
                best_val_loss = val as f64;
                snapshot(&net, best_val_loss).save(&best_path)?;
            }
            snapshot(&net, best_val_loss).save(&cfg.out)?;
        }
    }

    let checkpoint = snapshot(&net, best_val_loss);
    checkpoint.save(&cfg.out)?;
    Ok(TrainReport { checkpoint, train_losses, val_losses })
}
