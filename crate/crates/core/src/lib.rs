//! Patch-based semantic segmentation of tissue-microarray (TMA) cores.
//!
//! The crate covers the full workflow: PNG imaging I/O, color-annotation
//! decoding, patch tiling and stitching, area-balanced dataset splits, a
//! compact reverse-mode autodiff engine with Adam, seven segmentation
//! architectures, a deterministic trainer with binary checkpoints, and
//! pixel-wise per-core evaluation with threshold sweeps.

pub mod annotation;
pub mod dataset;
pub mod evaluation;
pub mod gradcheck;
pub mod graph;
pub mod imaging;
pub mod models;
pub mod params;
pub mod seeding;
pub mod synthetic;
pub mod tensor;
pub mod tiling;
pub mod trainer;

pub use annotation::{decode_annotation, encode_labels, to_binary_target, BinaryTarget, ClassAreas, Label, LabelMask};
pub use dataset::{balance_split, read_manifest, write_manifest, CoreRecord, CoreStore, DatasetError, Split, SplitManifest};
pub use evaluation::{
    parse_report, pixel_counts, predict_core, predict_split, prf1, report_at, report_to_string,
    sweep_threshold, CoreMetrics, CorePrediction, EvalError, EvalReport, PixelCounts,
};
pub use graph::{stable_sigmoid, Graph, GraphError, Mode, NodeId, Padding};
pub use imaging::{load_heatmap, load_rgb, save_heatmap, save_rgb, Heatmap, ImageRGB, ImagingError};
pub use models::{build_model, receptive_field, Arch, ModelConfig, ModelError, Network, ReceptiveField};
pub use params::{ParamError, ParameterSet};
pub use tensor::{Real, Tensor};
pub use tiling::{extract, plan_grid, stitch, Patch, PatchGrid, TilingError};
pub use trainer::{train, validate, Checkpoint, TrainConfig, TrainReport, TrainerError};
