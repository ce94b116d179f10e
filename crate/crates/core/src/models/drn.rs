//! Dilated residual network. A stride-1 stem feeds five stages of basic
//! residual blocks (conv-bn-relu-conv-bn plus identity or projected skip,
//! then relu). The first three stages downsample by stride 2; the last two
//! keep resolution and dilate their convolutions by 2 and 4 instead. Two
//! dilation-1 conv-bn-relu layers then smooth the gridding artifacts that
//! large dilations leave behind, and a 1x1 head plus nearest x8 upsampling
//! produces full-resolution logits.
//!
//! The depth names count parameterized layers at scale 1: stem + 2 convs
//! per block + 2 degridding layers + head. Block counts 2,2,3,2,2 give 26;
//! 3,4,6,3,3 give 42.

use rand_chacha::ChaCha8Rng;

use super::common::{init_conv, init_conv_bn, scaled_count, stage_width, Fwd};
use super::rf::ReceptiveField;
use super::{Arch, ModelConfig};
use crate::graph::{GraphError, NodeId};
use crate::params::ParameterSet;

const STAGES: usize = 5;
/// (stride, dilation) per stage.
const STAGE_GEOM: [(usize, usize); STAGES] = [(2, 1), (2, 1), (2, 1), (1, 2), (1, 4)];

struct Plan {
    widths: [usize; STAGES],
    counts: [usize; STAGES],
}

fn plan(cfg: &ModelConfig) -> Plan {
    let full: [usize; STAGES] = match cfg.arch {
        Arch::DrnC42 => [3, 4, 6, 3, 3],
        _ => [2, 2, 3, 2, 2],
    };
    let mut widths = [0; STAGES];
    let mut counts = [0; STAGES];
    for s in 0..STAGES {
        widths[s] = stage_width(cfg.base_channels, (s as u32).min(2), cfg.depth_scale);
        counts[s] = scaled_count(full[s], cfg.depth_scale);
    }
    Plan { widths, counts }
}

pub(super) fn init(cfg: &ModelConfig, ps: &mut ParameterSet, rng: &mut ChaCha8Rng) {
    let p = plan(cfg);
    init_conv_bn(ps, rng, "stem.conv", 3, 3, cfg.base_channels);
    let mut cin = cfg.base_channels;
    for s in 0..STAGES {
        let w = p.widths[s];
        let (stride, _) = STAGE_GEOM[s];
        for b in 0..p.counts[s] {
            let name = format!("stage{}.block{}", s + 1, b + 1);
            init_conv_bn(ps, rng, &format!("{name}.conv1"), 3, cin, w);
            init_conv_bn(ps, rng, &format!("{name}.conv2"), 3, w, w);
            if cin != w || (b == 0 && stride != 1) {
                init_conv_bn(ps, rng, &format!("{name}.proj"), 1, cin, w);
            }
            cin = w;
        }
    }
    init_conv_bn(ps, rng, "degrid1.conv", 3, cin, cin);
    init_conv_bn(ps, rng, "degrid2.conv", 3, cin, cin);
    init_conv(ps, rng, "head.conv", 1, cin, 1, true);
}

pub(super) fn forward(fw: &mut Fwd, cfg: &ModelConfig, x: NodeId) -> Result<NodeId, GraphError> {
    let p = plan(cfg);
    let mut cur = fw.conv_bn_relu("stem.conv", x, 1, 1)?;
    for s in 0..STAGES {
        let (stage_stride, dilation) = STAGE_GEOM[s];
        for b in 0..p.counts[s] {
            let name = format!("stage{}.block{}", s + 1, b + 1);
            let stride = if b == 0 { stage_stride } else { 1 };
            let main = fw.conv_bn_relu(&format!("{name}.conv1"), cur, stride, dilation)?;
            let main = fw.conv_bn(&format!("{name}.conv2"), main, 1, dilation)?;
            let skip = if fw.ps.get(&format!("{name}.proj.w")).is_some() {
                fw.conv_bn(&format!("{name}.proj"), cur, stride, 1)?
            } else {
                cur
            };
            let sum = fw.g.add(main, skip)?;
            cur = fw.g.relu(sum);
        }
    }
    cur = fw.conv_bn_relu("degrid1.conv", cur, 1, 1)?;
    cur = fw.conv_bn_relu("degrid2.conv", cur, 1, 1)?;
    cur = fw.conv("head.conv", cur, 1, 1)?;
    fw.g.nearest_upsample(cur, 8)
}

pub(super) fn receptive_field(cfg: &ModelConfig) -> usize {
    let p = plan(cfg);
    let mut rf = ReceptiveField::new();
    rf.conv(3, 1, 1);
    for s in 0..STAGES {
        let (stage_stride, dilation) = STAGE_GEOM[s];
        for b in 0..p.counts[s] {
            // Main path of each block; the skip is never wider.
            let stride = if b == 0 { stage_stride } else { 1 };
            rf.conv(3, stride, dilation).conv(3, 1, dilation);
        }
    }
    rf.conv(3, 1, 1).conv(3, 1, 1).conv(1, 1, 1).upsample(8);
    rf.field()
}
