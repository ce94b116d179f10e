//! Layer building blocks shared by the architecture definitions.
//!
//! Every layer has two halves that must agree on parameter names and shapes:
//! `init_*` registers tensors in a [`ParameterSet`], and the [`Fwd`] methods
//! replay the same names onto a [`Graph`]. Architectures drive both halves
//! from one plan value so the two cannot drift apart.

use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, GraphError, Mode, NodeId, Padding};
use crate::params::{he_normal, ParameterSet};
use crate::tensor::Tensor;

/// Widths follow the usual doubling ladder `base * 2^level`, but the doubling
/// is capped so that `depth_scale` shrinks wide layers as well as deep ones.
/// At scale 1 the cap is 8 (ladder c, 2c, 4c, 8c); at the compact scale 0.25
/// it is 2, which flattens the ladder to c, 2c, 2c, 2c.
pub(super) fn stage_width(base_channels: usize, level: u32, depth_scale: f64) -> usize {
    let cap = (8.0 * depth_scale).round().max(1.0) as usize;
    base_channels * (1usize << level.min(10)).min(cap)
}

/// Scales a repeat count, always keeping at least one repetition.
pub(super) fn scaled_count(full: usize, depth_scale: f64) -> usize {
    ((full as f64 * depth_scale).ceil() as usize).max(1)
}

/// Registers a `k x k` convolution: weight `{name}.w` of shape
/// [cout, k, k, cin], plus `{name}.b` when `bias` is set.
pub(super) fn init_conv(
    ps: &mut ParameterSet,
    rng: &mut ChaCha8Rng,
    name: &str,
    k: usize,
    cin: usize,
    cout: usize,
    bias: bool,
) {
    let w = he_normal(&[cout, k, k, cin], k * k * cin, rng);
    ps.insert_trainable(&format!("{name}.w"), w);
    if bias {
        ps.insert_trainable(&format!("{name}.b"), Tensor::zeros(&[cout]));
    }
}

/// Registers a transposed convolution: weight `{name}.w` of shape
/// [cin, k, k, cout]. No bias; every use site feeds a later add or norm.
pub(super) fn init_deconv(
    ps: &mut ParameterSet,
    rng: &mut ChaCha8Rng,
    name: &str,
    k: usize,
    cin: usize,
    cout: usize,
) {
    let w = he_normal(&[cin, k, k, cout], k * k * cin, rng);
    ps.insert_trainable(&format!("{name}.w"), w);
}

/// Registers batch-norm parameters for `c` channels under `{name}`:
/// trainable gamma/beta plus running-moment buffers.
pub(super) fn init_bn(ps: &mut ParameterSet, name: &str, c: usize) {
    ps.insert_trainable(&format!("{name}.gamma"), Tensor::full(&[c], 1.0));
    ps.insert_trainable(&format!("{name}.beta"), Tensor::zeros(&[c]));
    ps.insert_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[c]));
    ps.insert_buffer(&format!("{name}.running_var"), Tensor::full(&[c], 1.0));
}

/// Registers conv + batch norm under `{name}` / `{name}.bn`. The conv takes
/// no bias: it would be cancelled by the normalization and would never
/// receive a gradient.
pub(super) fn init_conv_bn(
    ps: &mut ParameterSet,
    rng: &mut ChaCha8Rng,
    name: &str,
    k: usize,
    cin: usize,
    cout: usize,
) {
    init_conv(ps, rng, name, k, cin, cout, false);
    init_bn(ps, &format!("{name}.bn"), cout);
}

/// Forward-pass context: replays named layers onto a graph.
pub(super) struct Fwd<'g, 'p> {
    pub g: &'g mut Graph,
    pub ps: &'p ParameterSet,
    pub mode: Mode,
}

impl Fwd<'_, '_> {
    fn p(&mut self, name: &str) -> Result<NodeId, GraphError> {
        self.g.param(self.ps, name)
    }

    /// Same-padded convolution `{name}`; picks up `{name}.b` if registered.
    pub fn conv(
        &mut self,
        name: &str,
        x: NodeId,
        stride: usize,
        dilation: usize,
    ) -> Result<NodeId, GraphError> {
        let w = self.p(&format!("{name}.w"))?;
        let b = if self.ps.get(&format!("{name}.b")).is_some() {
            Some(self.p(&format!("{name}.b"))?)
        } else {
            None
        };
        self.g.conv2d(x, w, b, stride, dilation, Padding::Same)
    }

    /// Batch norm registered under `{name}`.
    pub fn bn(&mut self, name: &str, x: NodeId) -> Result<NodeId, GraphError> {
        let gamma = self.p(&format!("{name}.gamma"))?;
        let beta = self.p(&format!("{name}.beta"))?;
        self.g.batch_norm(x, gamma, beta, self.mode, self.ps, name)
    }

    /// conv `{name}` -> bn `{name}.bn` -> relu.
    pub fn conv_bn_relu(
        &mut self,
        name: &str,
        x: NodeId,
        stride: usize,
        dilation: usize,
    ) -> Result<NodeId, GraphError> {
        let c = self.conv(name, x, stride, dilation)?;
        let n = self.bn(&format!("{name}.bn"), c)?;
        Ok(self.g.relu(n))
    }

    /// conv `{name}` -> bn `{name}.bn`, no activation (residual pre-sum).
    pub fn conv_bn(
        &mut self,
        name: &str,
        x: NodeId,
        stride: usize,
        dilation: usize,
    ) -> Result<NodeId, GraphError> {
        let c = self.conv(name, x, stride, dilation)?;
        self.bn(&format!("{name}.bn"), c)
    }

    /// Transposed convolution `{name}`.
    pub fn deconv(&mut self, name: &str, x: NodeId, stride: usize) -> Result<NodeId, GraphError> {
        let w = self.p(&format!("{name}.w"))?;
        self.g.transposed_conv2d(x, w, stride)
    }
}
