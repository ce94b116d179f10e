//! Dataset assembly: area-balanced train/val/test splits over cores,
//! manifest persistence, seeded random patch sampling with dihedral
//! augmentation, and a caching on-disk core store.
//!
//! A dataset directory holds one image PNG (`<id>.png`) and one annotation
//! mask PNG (`<id>.mask.png`) per core. Splitting balances the *area share*
//! of each tissue class (cancer, stroma, necrosis, normal) against the
//! requested fractions rather than balancing core counts, since cores vary
//! wildly in annotated area.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotation::{decode_annotation, to_binary_target, BinaryTarget, ClassAreas};
use crate::imaging::{load_rgb, ImageRGB, ImagingError};
use crate::tensor::Real;
use crate::tiling::{extract_at, Patch, TilingError};

/// Which partition a core belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// All splits, in tie-breaking / preference order.
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_name(name: &str) -> Option<Split> {
        match name {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Errors from split construction, manifest I/O, and the core store.
#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    /// The input cannot be split or sampled as requested.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    /// A manifest file is malformed.
    #[error("manifest parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },
    /// Underlying file-system failure.
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    /// A core image exists but its annotation mask does not.
    #[error("core {core_id} has no annotation mask at {path}")]
    MissingMask { core_id: String, path: PathBuf },
    /// A core's image and annotation mask disagree on dimensions.
    #[error(
        "core {core_id}: image is {}x{} but mask is {}x{}",
        image.0, image.1, mask.0, mask.1
    )]
    MaskMismatch {
        core_id: String,
        image: (usize, usize),
        mask: (usize, usize),
    },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Tiling(#[from] TilingError),
}

/// One core known to the dataset: its identity, file locations, and
/// annotated class areas.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoreRecord {
    pub core_id: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub areas: ClassAreas,
}

/// One manifest line: a core, its split, and its class areas.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub core_id: String,
    pub split: Split,
    pub areas: ClassAreas,
}

/// A complete train/val/test assignment, one entry per core, sorted by
/// core id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitManifest {
    /// Seed the assignment was generated with.
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl SplitManifest {
    /// Core ids of one split, in manifest (core-id) order.
    pub fn split_ids(&self, split: Split) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.core_id.as_str())
            .collect()
    }

    /// Summed class areas of one split.
    pub fn totals(&self, split: Split) -> ClassAreas {
        let mut t = [0usize; 4];
        for e in self.entries.iter().filter(|e| e.split == split) {
            for (acc, a) in t.iter_mut().zip(e.areas.as_array()) {
                *acc += a;
            }
        }
        ClassAreas::from_array(t)
    }

    pub fn get(&self, core_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.core_id == core_id)
    }
}

/// Assigns cores to train/val/test so each split's share of every tissue
/// class's total area tracks the requested fractions.
///
/// `fractions` are `(train, val, test)`, each positive, summing to 1.
///
/// Algorithm: shuffle cores by `seed`, stable-sort by total annotated area
/// descending (the shuffle only breaks area ties), then greedily assign
/// each core to the split minimizing the total imbalance — the sum over
/// splits and classes of `|split share of class - split fraction|` — after
/// the assignment. Ties prefer the split with the fewest members relative
/// to its fraction, then Train, Val, Test. A final repair pass guarantees
/// every split is non-empty by moving the smallest core out of the
/// fullest split.
pub fn balance_split(
    cores: &[CoreRecord],
    fractions: [f64; 3],
    seed: u64,
) -> Result<SplitManifest, DatasetError> {
    if cores.len() < 3 {
        return Err(DatasetError::DegenerateInput(format!(
            "need at least 3 cores to form non-empty train/val/test splits, got {}",
            cores.len()
        )));
    }
    assert!(
        fractions.iter().all(|&f| f > 0.0) && (fractions.iter().sum::<f64>() - 1.0).abs() < 1e-9,
        "split fractions must be positive and sum to 1, got {fractions:?}"
    );
    let mut seen = HashSet::new();
    for c in cores {
        if !seen.insert(c.core_id.as_str()) {
            return Err(DatasetError::DegenerateInput(format!(
                "duplicate core id '{}'",
                c.core_id
            )));
        }
    }

    let mut order: Vec<usize> = (0..cores.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by_key(|&i| std::cmp::Reverse(cores[i].areas.total()));

    let mut grand = [0.0f64; 4];
    for c in cores {
        for (g, a) in grand.iter_mut().zip(c.areas.as_array()) {
            *g += a as f64;
        }
    }

    let mut acc = [[0.0f64; 4]; 3];
    let mut assignment = vec![0usize; cores.len()];
    let mut members: [Vec<usize>; 3] = Default::default();
    // Imbalance contributed by one split, given its accumulated areas plus
    // an optional tentative core.
    let split_term = |acc: &[[f64; 4]; 3], s: usize, extra: Option<&[usize; 4]>| -> f64 {
        let mut term = 0.0;
        for c in 0..4 {
            if grand[c] > 0.0 {
                let a = acc[s][c] + extra.map_or(0.0, |e| e[c] as f64);
                term += (a / grand[c] - fractions[s]).abs();
            }
        }
        term
    };
    // Area deltas of two candidates often tie exactly (e.g. while every
    // split is still under target, any assignment reduces the total
    // imbalance by the same amount); anything within this margin of the
    // minimum is treated as a tie. Genuine differences are at least one
    // pixel over the grand total, far above it.
    const TIE_EPS: f64 = 1e-12;
    for &ci in &order {
        let areas = cores[ci].areas.as_array();
        // Minimize the total imbalance over all three splits after the
        // assignment; only the candidate split's term changes, so the
        // candidates are compared by that term's delta. Ties prefer the
        // split with the fewest members relative to its fraction (keeping
        // core counts near the fractions too), then Train, Val, Test.
        let deltas: Vec<f64> = (0..3)
            .map(|s| split_term(&acc, s, Some(&areas)) - split_term(&acc, s, None))
            .collect();
        let min_delta = deltas.iter().cloned().fold(f64::INFINITY, f64::min);
        let best = (0..3)
            .filter(|&s| deltas[s] <= min_delta + TIE_EPS)
            .min_by(|&a, &b| {
                let ka = members[a].len() as f64 / fractions[a];
                let kb = members[b].len() as f64 / fractions[b];
                ka.partial_cmp(&kb).expect("finite").then(a.cmp(&b))
            })
            .expect("three candidate splits");
        assignment[ci] = best;
        members[best].push(ci);
        for c in 0..4 {
            acc[best][c] += areas[c] as f64;
        }
    }

    // Repair pass: every split must end non-empty. Move the smallest-area
    // core out of the split with the most members (ties prefer Train).
    while let Some(empty) = (0..3).find(|&s| members[s].is_empty()) {
        let donor = (0..3)
            .max_by_key(|&s| (members[s].len(), std::cmp::Reverse(s)))
            .expect("three splits");
        let pos = (0..members[donor].len())
            .min_by_key(|&p| {
                let ci = members[donor][p];
                (cores[ci].areas.total(), cores[ci].core_id.clone())
            })
            .expect("donor is non-empty");
        let ci = members[donor].remove(pos);
        assignment[ci] = empty;
        members[empty].push(ci);
    }

    let mut entries: Vec<ManifestEntry> = cores
        .iter()
        .enumerate()
        .map(|(i, c)| ManifestEntry {
            core_id: c.core_id.clone(),
            split: Split::ALL[assignment[i]],
            areas: c.areas,
        })
        .collect();
    entries.sort_by(|a, b| a.core_id.cmp(&b.core_id));
    Ok(SplitManifest { seed, entries })
}

/// Renders a manifest in its line-oriented text format:
/// a `seed<TAB>N` header, then one
/// `core_id<TAB>split<TAB>cancer,stroma,necrosis,normal` line per core.
pub fn manifest_to_string(m: &SplitManifest) -> String {
    let mut out = format!("seed\t{}\n", m.seed);
    for e in &m.entries {
        let a = e.areas;
        out.push_str(&format!(
            "{}\t{}\t{},{},{},{}\n",
            e.core_id, e.split, a.cancer, a.stroma, a.necrosis, a.normal
        ));
    }
    out
}

/// Parses the manifest text format; `line` in errors is 1-based.
pub fn manifest_from_str(text: &str) -> Result<SplitManifest, DatasetError> {
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(DatasetError::Parse {
            line: 1,
            detail: "empty manifest: expected 'seed\\t<number>' header".into(),
        });
    };
    let seed = match header.split('\t').collect::<Vec<_>>()[..] {
        ["seed", value] => value.parse::<u64>().map_err(|e| DatasetError::Parse {
            line: 1,
            detail: format!("bad seed value '{value}': {e}"),
        })?,
        _ => {
            return Err(DatasetError::Parse {
                line: 1,
                detail: format!("expected 'seed\\t<number>' header, got '{header}'"),
            })
        }
    };
    let mut entries = Vec::new();
    let mut ids = HashSet::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let fields: Vec<&str> = raw.split('\t').collect();
        let [core_id, split, areas] = fields[..] else {
            return Err(DatasetError::Parse {
                line,
                detail: format!(
                    "expected 3 tab-separated fields (core_id, split, areas), got {}",
                    fields.len()
                ),
            });
        };
        if core_id.is_empty() {
            return Err(DatasetError::Parse { line, detail: "empty core id".into() });
        }
        if !ids.insert(core_id.to_string()) {
            return Err(DatasetError::Parse {
                line,
                detail: format!("duplicate core id '{core_id}'"),
            });
        }
        let split = Split::from_name(split).ok_or_else(|| DatasetError::Parse {
            line,
            detail: format!("unknown split '{split}' (expected train, val, or test)"),
        })?;
        let parts: Vec<&str> = areas.split(',').collect();
        if parts.len() != 4 {
            return Err(DatasetError::Parse {
                line,
                detail: format!(
                    "expected 4 comma-separated areas (cancer,stroma,necrosis,normal), got {}",
                    parts.len()
                ),
            });
        }
        let mut a = [0usize; 4];
        for (slot, part) in a.iter_mut().zip(&parts) {
            *slot = part.parse().map_err(|e| DatasetError::Parse {
                line,
                detail: format!("bad area '{part}': {e}"),
            })?;
        }
        entries.push(ManifestEntry { core_id: core_id.to_string(), split, areas: ClassAreas::from_array(a) });
    }
    if entries.is_empty() {
        return Err(DatasetError::Parse { line: 2, detail: "manifest lists no cores".into() });
    }
    Ok(SplitManifest { seed, entries })
}

/// Writes a manifest as text (see [`manifest_to_string`]).
pub fn write_manifest(m: &SplitManifest, path: &Path) -> Result<(), DatasetError> {
    std::fs::write(path, manifest_to_string(m))
        .map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}

/// Reads a manifest written by [`write_manifest`].
pub fn read_manifest(path: &Path) -> Result<SplitManifest, DatasetError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    manifest_from_str(&text)
}

/// Size of the dihedral group of the square: 4 rotations × optional mirror.
pub const DIHEDRAL_TRANSFORMS: u8 = 8;

/// Source coordinates for output pixel `(y, x)` of an `n x n` raster under
/// transform `t`: `t & 3` clockwise quarter-turns, `t >= 4` adds a
/// horizontal mirror (applied before the rotation).
fn dihedral_source(t: u8, n: usize, y: usize, x: usize) -> (usize, usize) {
    let (sy, sx) = match t & 3 {
        0 => (y, x),
        1 => (n - 1 - x, y),
        2 => (n - 1 - y, n - 1 - x),
        _ => (x, n - 1 - y),
    };
    if t >= 4 {
        (sy, n - 1 - sx)
    } else {
        (sy, sx)
    }
}

/// Applies one of the 8 dihedral transforms identically to a square
/// patch's image, target, and weight. Transform 0 is the identity.
pub fn apply_dihedral(patch: &Patch, transform: u8) -> Patch {
    assert!(transform < DIHEDRAL_TRANSFORMS, "transform must be in 0..8, got {transform}");
    assert_eq!(patch.height, patch.width, "dihedral transforms require square patches");
    if transform == 0 {
        return patch.clone();
    }
    let n = patch.height;
    let src_img = patch.image.data();
    let mut image = vec![0.0 as Real; src_img.len()];
    let mut target = vec![0i8; n * n];
    let mut weight = vec![0.0 as Real; n * n];
    for y in 0..n {
        for x in 0..n {
            let (sy, sx) = dihedral_source(transform, n, y, x);
            let d = y * n + x;
            let s = sy * n + sx;
            image[d * 3..d * 3 + 3].copy_from_slice(&src_img[s * 3..s * 3 + 3]);
            target[d] = patch.target[s];
            weight[d] = patch.weight[s];
        }
    }
    Patch {
        origin: patch.origin,
        height: n,
        width: n,
        image: crate::tensor::Tensor::from_vec(&[n, n, 3], image),
        target,
        weight,
    }
}

/// Maximum resamples of a patch whose loss weight is zero everywhere
/// before it is accepted as-is.
pub const MAX_EMPTY_PATCH_RETRIES: usize = 100;

/// Samples `count` square patches at seeded uniformly random origins.
///
/// Patches with all-zero loss weight are rejected and resampled up to
/// [`MAX_EMPTY_PATCH_RETRIES`] times, then accepted as-is. With `augment`
/// set, each patch additionally receives an independently sampled dihedral
/// transform. Fully deterministic given `seed`.
pub fn sample_patches_from(
    core: &ImageRGB,
    target: &BinaryTarget,
    count: usize,
    patch: usize,
    seed: u64,
    augment: bool,
) -> Result<Vec<Patch>, TilingError> {
    assert!(patch >= 1, "patch size must be at least 1");
    if patch > core.height() || patch > core.width() {
        return Err(TilingError::PatchLargerThanCore {
            patch,
            core_height: core.height(),
            core_width: core.width(),
        });
    }
    if (target.height(), target.width()) != (core.height(), core.width()) {
        return Err(TilingError::DimensionMismatch {
            what: "target does not match core",
            expected: (core.height(), core.width()),
            got: (target.height(), target.width()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut attempt = 0;
        let mut p = loop {
            let oy = rng.random_range(0..=core.height() - patch);
            let ox = rng.random_range(0..=core.width() - patch);
            let cand = extract_at(core, target, (oy, ox), patch, patch);
            if cand.weight.iter().any(|&w| w != 0.0) || attempt == MAX_EMPTY_PATCH_RETRIES {
                break cand;
            }
            attempt += 1;
        };
        if augment {
            let t = rng.random_range(0..DIHEDRAL_TRANSFORMS);
            p = apply_dihedral(&p, t);
        }
        out.push(p);
    }
    Ok(out)
}

/// [`sample_patches_from`] over a core loaded from its record's files.
pub fn sample_patches(
    record: &CoreRecord,
    count: usize,
    patch: usize,
    seed: u64,
    augment: bool,
) -> Result<Vec<Patch>, DatasetError> {
    let image = load_rgb(&record.image_path)?;
    let mask = load_rgb(&record.mask_path)?;
    if (mask.height(), mask.width()) != (image.height(), image.width()) {
        return Err(DatasetError::MaskMismatch {
            core_id: record.core_id.clone(),
            image: (image.height(), image.width()),
            mask: (mask.height(), mask.width()),
        });
    }
    let target = to_binary_target(&decode_annotation(&mask));
    Ok(sample_patches_from(&image, &target, count, patch, seed, augment)?)
}

/// A decoded core held in memory: its image and binary target.
#[derive(Clone, Debug)]
pub struct CorePixels {
    pub image: ImageRGB,
    pub target: BinaryTarget,
}

/// Lazy, caching loader for a dataset directory holding `<id>.png` core
/// images with `<id>.mask.png` annotation masks.
pub struct CoreStore {
    root: PathBuf,
    cache: Mutex<HashMap<String, Arc<CorePixels>>>,
}

impl fmt::Debug for CoreStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoreStore").field("root", &self.root).finish_non_exhaustive()
    }
}

impl CoreStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), cache: Mutex::new(HashMap::new()) }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn image_path(&self, core_id: &str) -> PathBuf {
        self.root.join(format!("{core_id}.png"))
    }

    pub fn mask_path(&self, core_id: &str) -> PathBuf {
        self.root.join(format!("{core_id}.mask.png"))
    }

    /// Loads (or returns the cached) image + decoded target of one core.
    pub fn load(&self, core_id: &str) -> Result<Arc<CorePixels>, DatasetError> {
        if let Some(hit) = self.cache.lock().expect("store lock").get(core_id) {
            return Ok(hit.clone());
        }
        let image = load_rgb(&self.image_path(core_id))?;
        let mask_path = self.mask_path(core_id);
        let mask = match load_rgb(&mask_path) {
            Err(ImagingError::FileNotFound { path }) => {
                return Err(DatasetError::MissingMask { core_id: core_id.to_string(), path })
            }
            other => other?,
        };
        if (mask.height(), mask.width()) != (image.height(), image.width()) {
            return Err(DatasetError::MaskMismatch {
                core_id: core_id.to_string(),
                image: (image.height(), image.width()),
                mask: (mask.height(), mask.width()),
            });
        }
        let target = to_binary_target(&decode_annotation(&mask));
        let pixels = Arc::new(CorePixels { image, target });
        self.cache.lock().expect("store lock").insert(core_id.to_string(), pixels.clone());
        Ok(pixels)
    }

    /// Enumerates the directory's cores (every `<id>.png` that is not a
    /// mask or annotation layer), decoding each mask for its class areas.
    /// Records are sorted by core id.
    pub fn scan(&self) -> Result<Vec<CoreRecord>, DatasetError> {
        let dir = std::fs::read_dir(&self.root)
            .map_err(|source| DatasetError::Io { path: self.root.clone(), source })?;
        let mut ids = Vec::new();
        for entry in dir {
            let entry =
                entry.map_err(|source| DatasetError::Io { path: self.root.clone(), source })?;
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            if let Some(id) = name.strip_suffix(".png") {
                if !id.ends_with(".mask") && !id.ends_with(".annotation") && !id.is_empty() {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        let mut records = Vec::with_capacity(ids.len());
        for id in ids {
            let mask_path = self.mask_path(&id);
            let mask = match load_rgb(&mask_path) {
                Err(ImagingError::FileNotFound { path }) => {
                    return Err(DatasetError::MissingMask { core_id: id, path })
                }
                other => other?,
            };
            let areas = to_binary_target(&decode_annotation(&mask)).areas();
            records.push(CoreRecord {
                image_path: self.image_path(&id),
                mask_path,
                core_id: id,
                areas,
            });
        }
        Ok(records)
    }
}
