//! Seven compact segmentation architectures over the autodiff graph, each
//! mapping an n x h x w x 3 batch to n x h x w x 1 logits at the same
//! spatial resolution.
//!
//! All seven follow the same conventions: 3x3 convolutions with batch norm
//! and relu everywhere except the logit head, seeded He initialization, and
//! hierarchical dot-separated parameter names with the terminal layer under
//! `head.`. The depth suffixes in the family names (c26, d56, ...) refer to
//! the original full-scale designs; `base_channels` and `depth_scale` size
//! each instance, with every full preset at scale 1 and a `-compact` preset
//! sized for CPU training.

mod common;
mod densenet;
mod dilated;
mod drn;
mod fcn;
mod rf;
mod unet;

pub use rf::ReceptiveField;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{Graph, GraphError, Mode, NodeId};
use crate::params::ParameterSet;
use crate::tensor::Tensor;
use common::Fwd;

/// The seven supported architecture families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    Fcn123S,
    DilatedNet,
    DrnC26,
    DrnC42,
    Unet,
    DensenetD56,
    DensenetD103,
}

impl Arch {
    pub const ALL: [Arch; 7] = [
        Arch::Fcn123S,
        Arch::DilatedNet,
        Arch::DrnC26,
        Arch::DrnC42,
        Arch::Unet,
        Arch::DensenetD56,
        Arch::DensenetD103,
    ];

    /// Stable identifier used in preset names, CLI flags, and checkpoints.
    pub fn name(self) -> &'static str {
        match self {
            Arch::Fcn123S => "123s",
            Arch::DilatedNet => "dilatednet",
            Arch::DrnC26 => "drn-c26",
            Arch::DrnC42 => "drn-c42",
            Arch::Unet => "unet",
            Arch::DensenetD56 => "densenet-d56",
            Arch::DensenetD103 => "densenet-d103",
        }
    }

    pub fn from_name(name: &str) -> Option<Arch> {
        Arch::ALL.into_iter().find(|a| a.name() == name)
    }

    /// Input height and width must be multiples of this.
    pub fn alignment(self) -> usize {
        match self {
            Arch::Fcn123S | Arch::DilatedNet | Arch::DrnC26 | Arch::DrnC42 => 8,
            Arch::Unet => 16,
            Arch::DensenetD56 | Arch::DensenetD103 => 32,
        }
    }

    fn is_densenet(self) -> bool {
        matches!(self, Arch::DensenetD56 | Arch::DensenetD103)
    }
}

/// Sizing and seeding for one network instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Stem width; deeper stages scale up from it. At least 4.
    pub base_channels: usize,
    /// Multiplies block repeat counts and caps width growth; in (0, 1].
    pub depth_scale: f64,
    /// Channels added per dense layer; densenet archs only (0 elsewhere).
    pub growth_rate: usize,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl ModelConfig {
    /// Full-scale preset for an architecture.
    pub fn full(arch: Arch, seed: u64) -> ModelConfig {
        let (base, growth) = match arch {
            Arch::DensenetD56 => (48, 12),
            Arch::DensenetD103 => (48, 16),
            _ => (64, 0),
        };
        ModelConfig { arch, base_channels: base, depth_scale: 1.0, growth_rate: growth, seed }
    }

    /// CPU-sized preset: base 16, quarter depth, growth 8.
    pub fn compact(arch: Arch, seed: u64) -> ModelConfig {
        ModelConfig {
            arch,
            base_channels: 16,
            depth_scale: 0.25,
            growth_rate: if arch.is_densenet() { 8 } else { 0 },
            seed,
        }
    }

    /// Looks up a preset by stable name: an architecture name (`unet`,
    /// `drn-c26`, ...) or its `-compact` variant.
    pub fn preset(name: &str, seed: u64) -> Result<ModelConfig, ModelError> {
        let (base, compact) = match name.strip_suffix("-compact") {
            Some(b) => (b, true),
            None => (name, false),
        };
        let arch = Arch::from_name(base).ok_or_else(|| {
            ModelError::InvalidConfig(format!(
                "unknown architecture preset `{name}`; expected one of {} (each also with a -compact variant)",
                Arch::ALL.map(Arch::name).join(", ")
            ))
        })?;
        Ok(if compact { ModelConfig::compact(arch, seed) } else { ModelConfig::full(arch, seed) })
    }

    /// Preset name this sizing corresponds to (`unet`, `unet-compact`,
    /// ...); falls back to the architecture name for hand-tuned sizes.
    pub fn preset_label(&self) -> String {
        if *self == ModelConfig::compact(self.arch, self.seed) {
            format!("{}-compact", self.arch.name())
        } else {
            self.arch.name().to_string()
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.base_channels < 4 {
            return Err(ModelError::InvalidConfig(format!(
                "base_channels must be at least 4, got {}",
                self.base_channels
            )));
        }
        if !(self.depth_scale > 0.0 && self.depth_scale <= 1.0) {
            return Err(ModelError::InvalidConfig(format!(
                "depth_scale must be in (0, 1], got {}",
                self.depth_scale
            )));
        }
        if self.arch.is_densenet() && self.growth_rate < 1 {
            return Err(ModelError::InvalidConfig(format!(
                "growth_rate must be at least 1 for {}, got {}",
                self.arch.name(),
                self.growth_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input height and width must be multiples of {required}, got {h}x{w}")]
    Alignment { required: usize, h: usize, w: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A built network: configuration, parameters, and input alignment.
///
/// Forward passes build a fresh graph per call, so a frozen network can run
/// them concurrently from multiple threads through a shared reference.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: ModelConfig,
    pub params: ParameterSet,
    pub alignment: usize,
}

/// Builds and seeds a network from its configuration.
pub fn build_model(cfg: &ModelConfig) -> Result<Network, ModelError> {
    cfg.validate()?;
    let mut ps = ParameterSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match cfg.arch {
        Arch::Fcn123S => fcn::init(cfg, &mut ps, &mut rng),
        Arch::DilatedNet => dilated::init(cfg, &mut ps, &mut rng),
        Arch::DrnC26 | Arch::DrnC42 => drn::init(cfg, &mut ps, &mut rng),
        Arch::Unet => unet::init(cfg, &mut ps, &mut rng),
        Arch::DensenetD56 | Arch::DensenetD103 => densenet::init(cfg, &mut ps, &mut rng),
    }
    Ok(Network { config: cfg.clone(), params: ps, alignment: cfg.arch.alignment() })
}

/// Analytic receptive field (side length in pixels) of one logit pixel.
pub fn receptive_field(cfg: &ModelConfig) -> usize {
    match cfg.arch {
        Arch::Fcn123S => fcn::receptive_field(cfg),
        Arch::DilatedNet => dilated::receptive_field(cfg),
        Arch::DrnC26 | Arch::DrnC42 => drn::receptive_field(cfg),
        Arch::Unet => unet::receptive_field(cfg),
        Arch::DensenetD56 | Arch::DensenetD103 => densenet::receptive_field(cfg),
    }
}

impl Network {
    /// Runs one forward pass on an n x h x w x 3 batch, returning the
    /// n x h x w x 1 logit map. `mode` selects batch-norm behavior.
    pub fn forward(&self, batch: &Tensor, mode: Mode) -> Result<Tensor, ModelError> {
        let mut g = Graph::new();
        let x = g.input(batch.clone());
        let out = self.forward_graph(&mut g, x, mode)?;
        Ok(g.value(out).clone())
    }

    /// Extends an existing graph with this network's layers, for callers
    /// that attach a loss and run backward.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        x: NodeId,
        mode: Mode,
    ) -> Result<NodeId, ModelError> {
        if let Some((_, h, w, _)) = g.value(x).nhwc() {
            let a = self.alignment;
            if h == 0 || w == 0 || h % a != 0 || w % a != 0 {
                return Err(ModelError::Alignment { required: a, h, w });
            }
        }
        let mut fw = Fwd { g, ps: &self.params, mode };
        let out = match self.config.arch {
            Arch::Fcn123S => fcn::forward(&mut fw, &self.config, x),
            Arch::DilatedNet => dilated::forward(&mut fw, &self.config, x),
            Arch::DrnC26 | Arch::DrnC42 => drn::forward(&mut fw, &self.config, x),
            Arch::Unet => unet::forward(&mut fw, &self.config, x),
            Arch::DensenetD56 | Arch::DensenetD103 => densenet::forward(&mut fw, &self.config, x),
        }?;
        Ok(out)
    }
}
