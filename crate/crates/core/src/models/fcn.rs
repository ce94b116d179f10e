//! Compact fully-convolutional network with staged downsampling and dual
//! skip fusion. A stride-1 stem feeds three stride-2 stages of 1, 2, and 3
//! conv-bn-relu layers (the name reads off those counts). 1x1 score layers
//! tap stages 2 and 3; the stage-3 scores are upsampled x2 by a transposed
//! conv, fused with the stage-2 scores by addition, and a final transposed
//! conv brings the sum back x4 to input resolution (x8 total).

use rand_chacha::ChaCha8Rng;

use super::common::{init_conv, init_conv_bn, init_deconv, scaled_count, stage_width, Fwd};
use super::rf::ReceptiveField;
use super::ModelConfig;
use crate::graph::{GraphError, NodeId};
use crate::params::ParameterSet;

struct Plan {
    widths: [usize; 3],
    counts: [usize; 3],
}

fn plan(cfg: &ModelConfig) -> Plan {
    let mut widths = [0; 3];
    let mut counts = [0; 3];
    for s in 0..3 {
        widths[s] = stage_width(cfg.base_channels, s as u32, cfg.depth_scale);
        counts[s] = scaled_count(s + 1, cfg.depth_scale);
    }
    Plan { widths, counts }
}

pub(super) fn init(cfg: &ModelConfig, ps: &mut ParameterSet, rng: &mut ChaCha8Rng) {
    let p = plan(cfg);
    init_conv_bn(ps, rng, "stem.conv", 3, 3, cfg.base_channels);
    let mut cin = cfg.base_channels;
    for s in 0..3 {
        for b in 0..p.counts[s] {
            init_conv_bn(ps, rng, &format!("stage{}.conv{}", s + 1, b + 1), 3, cin, p.widths[s]);
            cin = p.widths[s];
        }
    }
    init_conv(ps, rng, "score2.conv", 1, p.widths[1], 1, true);
    init_conv(ps, rng, "score3.conv", 1, p.widths[2], 1, true);
    init_deconv(ps, rng, "up2.deconv", 4, 1, 1);
    init_deconv(ps, rng, "head.deconv", 8, 1, 1);
}

pub(super) fn forward(fw: &mut Fwd, cfg: &ModelConfig, x: NodeId) -> Result<NodeId, GraphError> {
    let p = plan(cfg);
    let mut cur = fw.conv_bn_relu("stem.conv", x, 1, 1)?;
    let mut stage_out = [cur; 3];
    for s in 0..3 {
        for b in 0..p.counts[s] {
            let stride = if b == 0 { 2 } else { 1 };
            cur = fw.conv_bn_relu(&format!("stage{}.conv{}", s + 1, b + 1), cur, stride, 1)?;
        }
        stage_out[s] = cur;
    }
    let sc3 = fw.conv("score3.conv", stage_out[2], 1, 1)?;
    let up = fw.deconv("up2.deconv", sc3, 2)?;
    let sc2 = fw.conv("score2.conv", stage_out[1], 1, 1)?;
    let fused = fw.g.add(up, sc2)?;
    fw.deconv("head.deconv", fused, 4)
}

pub(super) fn receptive_field(cfg: &ModelConfig) -> usize {
    let p = plan(cfg);
    let mut rf = ReceptiveField::new();
    rf.conv(3, 1, 1);
    for s in 0..3 {
        rf.conv(3, 2, 1);
        for _ in 1..p.counts[s] {
            rf.conv(3, 1, 1);
        }
    }
    // The stage-3 branch is the deeper of the two fused paths.
    rf.conv(1, 1, 1).deconv(4, 2).deconv(8, 4);
    rf.field()
}
