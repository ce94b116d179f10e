//! Patch tiling and stitching: cutting cores into fixed-size training
//! windows and recombining per-patch predictions into full-core heatmaps.
//!
//! A [`PatchGrid`] covers every pixel of a core with patches laid out at a
//! fixed stride; the final patch per axis is clamped to end exactly at the
//! core edge, so edge pixels are always covered. Stitching averages the
//! predictions of every patch covering a pixel, accumulating in a fixed
//! row-major origin order so results are bit-reproducible.

use crate::annotation::BinaryTarget;
use crate::imaging::{Heatmap, ImageRGB};
use crate::tensor::{Real, Tensor};

/// Errors from grid planning, patch extraction, and stitching.
#[derive(Debug, thiserror::Error)]
pub enum TilingError {
    /// The requested patch does not fit inside the core.
    #[error("patch size {patch} exceeds core dimensions {core_height}x{core_width}")]
    PatchLargerThanCore { patch: usize, core_height: usize, core_width: usize },
    /// Two rasters that must share dimensions do not.
    #[error("{what}: expected {}x{}, got {}x{}", expected.0, expected.1, got.0, got.1)]
    DimensionMismatch {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// Stitch received a different number of probability maps than the grid
    /// has origins.
    #[error("expected {expected} patch maps (one per origin), got {got}")]
    CountMismatch { expected: usize, got: usize },
    /// One probability map has the wrong number of values for the patch.
    #[error("patch map {index} has {got} values, expected {expected}")]
    MapSizeMismatch { index: usize, expected: usize, got: usize },
}

/// A planned tiling of one core: patch dimensions, stride, and the
/// deduplicated row-major list of patch origins.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub core_height: usize,
    pub core_width: usize,
    pub patch_height: usize,
    pub patch_width: usize,
    pub stride_y: usize,
    pub stride_x: usize,
    /// Top-left corners `(y, x)`, sorted row-major, no duplicates; every
    /// patch lies fully inside the core and every core pixel is covered.
    pub origins: Vec<(usize, usize)>,
}

/// Origins along one axis: `0, stride, 2*stride, ...` for as long as the
/// patch fits, plus a final origin clamped so the last patch ends exactly
/// at the edge (skipped when it would duplicate the previous origin).
fn axis_origins(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut origins = Vec::new();
    let mut o = 0;
    while o + patch <= extent {
        origins.push(o);
        o += stride;
    }
    let last = *origins.last().expect("patch fits at origin 0");
    if last + patch < extent {
        origins.push(extent - patch);
    }
    origins
}

/// Plans a square-patch grid over a `core_height x core_width` core.
///
/// `stride` must satisfy `1 <= stride <= patch` (overlapping or abutting
/// tiles only — gaps would leave pixels uncovered).
pub fn plan_grid(
    core_height: usize,
    core_width: usize,
    patch: usize,
    stride: usize,
) -> Result<PatchGrid, TilingError> {
    assert!(patch >= 1, "patch size must be at least 1");
    assert!(
        stride >= 1 && stride <= patch,
        "stride must satisfy 1 <= stride <= patch, got stride {stride} for patch {patch}"
    );
    if patch > core_height || patch > core_width {
        return Err(TilingError::PatchLargerThanCore { patch, core_height, core_width });
    }
    let ys = axis_origins(core_height, patch, stride);
    let xs = axis_origins(core_width, patch, stride);
    let mut origins = Vec::with_capacity(ys.len() * xs.len());
    for &y in &ys {
        for &x in &xs {
            origins.push((y, x));
        }
    }
    Ok(PatchGrid {
        core_height,
        core_width,
        patch_height: patch,
        patch_width: patch,
        stride_y: stride,
        stride_x: stride,
        origins,
    })
}

/// One training/inference example: a normalized image window with its
/// binary target and per-pixel loss weight.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    /// Top-left corner `(y, x)` in the source core.
    pub origin: (usize, usize),
    pub height: usize,
    pub width: usize,
    /// `[height, width, 3]`, values `byte/255 - 0.5` in `[-0.5, 0.5]`.
    pub image: Tensor,
    /// Row-major target values in `{1, 0, -1}`.
    pub target: Vec<i8>,
    /// Row-major loss weights; `0` exactly where `target` is `-1`, else `1`.
    pub weight: Vec<Real>,
}

impl Patch {
    /// The target as a `[height, width, 1]` tensor with ignore pixels
    /// mapped to `0` (their loss contribution is already zeroed by weight).
    pub fn target_tensor(&self) -> Tensor {
        let data = self.target.iter().map(|&t| if t == 1 { 1.0 } else { 0.0 }).collect();
        Tensor::from_vec(&[self.height, self.width, 1], data)
    }

    /// The loss weights as a `[height, width, 1]` tensor.
    pub fn weight_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.height, self.width, 1], self.weight.clone())
    }
}

/// Cuts one patch out of a core at `origin` (caller guarantees bounds).
///
/// Image bytes are normalized to `byte/255 - 0.5`; loss weight is `0`
/// exactly where the target is `-1`.
pub fn extract_at(
    core: &ImageRGB,
    target: &BinaryTarget,
    origin: (usize, usize),
    patch_height: usize,
    patch_width: usize,
) -> Patch {
    let (oy, ox) = origin;
    assert!(oy + patch_height <= core.height() && ox + patch_width <= core.width());
    let mut image = Vec::with_capacity(patch_height * patch_width * 3);
    let mut tgt = Vec::with_capacity(patch_height * patch_width);
    let mut weight = Vec::with_capacity(patch_height * patch_width);
    for y in 0..patch_height {
        let row = (oy + y) * core.width();
        let img_row = &core.data()[(row + ox) * 3..(row + ox + patch_width) * 3];
        image.extend(img_row.iter().map(|&c| c as Real / 255.0 - 0.5));
        let tgt_row = &target.values()[row + ox..row + ox + patch_width];
        tgt.extend_from_slice(tgt_row);
        weight.extend(tgt_row.iter().map(|&t| if t == -1 { 0.0 } else { 1.0 }));
    }
    Patch {
        origin,
        height: patch_height,
        width: patch_width,
        image: Tensor::from_vec(&[patch_height, patch_width, 3], image),
        target: tgt,
        weight,
    }
}

/// Extracts every patch of a planned grid, in grid (row-major) order.
pub fn extract(
    core: &ImageRGB,
    target: &BinaryTarget,
    grid: &PatchGrid,
) -> Result<Vec<Patch>, TilingError> {
    if (core.height(), core.width()) != (grid.core_height, grid.core_width) {
        return Err(TilingError::DimensionMismatch {
            what: "core does not match grid",
            expected: (grid.core_height, grid.core_width),
            got: (core.height(), core.width()),
        });
    }
    if (target.height(), target.width()) != (core.height(), core.width()) {
        return Err(TilingError::DimensionMismatch {
            what: "target does not match core",
            expected: (core.height(), core.width()),
            got: (target.height(), target.width()),
        });
    }
    Ok(grid
        .origins
        .iter()
        .map(|&o| extract_at(core, target, o, grid.patch_height, grid.patch_width))
        .collect())
}

/// Recombines per-patch probability maps (row-major within each patch, one
/// map per grid origin, in grid order) into a full-core heatmap.
///
/// Every pixel takes the arithmetic mean of all patches covering it,
/// accumulated in the grid's fixed origin order so the result is
/// bit-reproducible regardless of how the maps were produced.
pub fn stitch(grid: &PatchGrid, maps: &[Vec<Real>]) -> Result<Heatmap, TilingError> {
    if maps.len() != grid.origins.len() {
        return Err(TilingError::CountMismatch {
            expected: grid.origins.len(),
            got: maps.len(),
        });
    }
    let area = grid.patch_height * grid.patch_width;
    for (index, map) in maps.iter().enumerate() {
        if map.len() != area {
            return Err(TilingError::MapSizeMismatch { index, expected: area, got: map.len() });
        }
    }
    let mut sum = vec![0.0 as Real; grid.core_height * grid.core_width];
    let mut count = vec![0u32; grid.core_height * grid.core_width];
    for (&(oy, ox), map) in grid.origins.iter().zip(maps) {
        for y in 0..grid.patch_height {
            let dst = (oy + y) * grid.core_width + ox;
            let src = y * grid.patch_width;
            for x in 0..grid.patch_width {
                sum[dst + x] += map[src + x];
                count[dst + x] += 1;
            }
        }
    }
    let data = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| {
            debug_assert!(c > 0, "grid must cover every pixel");
            (s / c as Real) as f32
        })
        .collect();
    Ok(Heatmap::from_raw(grid.core_height, grid.core_width, data))
}
