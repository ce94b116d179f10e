//! Dilated-convolution network: a three-conv stride-2 front end brings the
//! input down x8, then a fixed eight-layer context block runs at that
//! resolution with dilations 1, 1, 2, 4, 8, 16, 1, 1 (the last layer is a
//! 1x1 mixer), growing the field of view exponentially without further
//! downsampling. A 1x1 head plus nearest-neighbor x8 upsampling restores
//! input resolution.

use rand_chacha::ChaCha8Rng;

use super::common::{init_conv, init_conv_bn, stage_width, Fwd};
use super::rf::ReceptiveField;
use super::ModelConfig;
use crate::graph::{GraphError, NodeId};
use crate::params::ParameterSet;

/// (kernel, dilation) per context layer.
const CONTEXT: [(usize, usize); 8] =
    [(3, 1), (3, 1), (3, 2), (3, 4), (3, 8), (3, 16), (3, 1), (1, 1)];

struct Plan {
    front: [usize; 3],
    context: usize,
}

fn plan(cfg: &ModelConfig) -> Plan {
    let mut front = [0; 3];
    for (s, w) in front.iter_mut().enumerate() {
        *w = stage_width(cfg.base_channels, s as u32, cfg.depth_scale);
    }
    Plan { front, context: front[2] }
}

pub(super) fn init(cfg: &ModelConfig, ps: &mut ParameterSet, rng: &mut ChaCha8Rng) {
    let p = plan(cfg);
    let mut cin = 3;
    for (s, &w) in p.front.iter().enumerate() {
        init_conv_bn(ps, rng, &format!("front.conv{}", s + 1), 3, cin, w);
        cin = w;
    }
    for (i, &(k, _)) in CONTEXT.iter().enumerate() {
        init_conv_bn(ps, rng, &format!("context.conv{}", i + 1), k, cin, p.context);
        cin = p.context;
    }
    init_conv(ps, rng, "head.conv", 1, p.context, 1, true);
}

pub(super) fn forward(fw: &mut Fwd, _cfg: &ModelConfig, x: NodeId) -> Result<NodeId, GraphError> {
    let mut cur = x;
    for s in 0..3 {
        cur = fw.conv_bn_relu(&format!("front.conv{}", s + 1), cur, 2, 1)?;
    }
    for (i, &(_, d)) in CONTEXT.iter().enumerate() {
        cur = fw.conv_bn_relu(&format!("context.conv{}", i + 1), cur, 1, d)?;
    }
    cur = fw.conv("head.conv", cur, 1, 1)?;
    fw.g.nearest_upsample(cur, 8)
}

pub(super) fn receptive_field(_cfg: &ModelConfig) -> usize {
    let mut rf = ReceptiveField::new();
    for _ in 0..3 {
        rf.conv(3, 2, 1);
    }
    for &(k, d) in &CONTEXT {
        rf.conv(k, 1, d);
    }
    rf.conv(1, 1, 1).upsample(8);
    rf.field()
}
