//! Encoder/decoder network with channel-concatenation skips: four pool/up
//! levels of two 3x3 conv-bn-relu layers each, a two-conv middle stage, and
//! a 1x1 logit head. Decoder levels upsample with a 2x2 stride-2 transposed
//! convolution and concatenate the matching encoder output.

use rand_chacha::ChaCha8Rng;

use super::common::{init_conv, init_conv_bn, init_deconv, stage_width, Fwd};
use super::rf::ReceptiveField;
use super::ModelConfig;
use crate::graph::{GraphError, NodeId};
use crate::params::ParameterSet;

const LEVELS: usize = 4;

struct Plan {
    /// Widths for encoder levels 1..=4 followed by the middle stage.
    widths: [usize; LEVELS + 1],
}

fn plan(cfg: &ModelConfig) -> Plan {
    let mut widths = [0; LEVELS + 1];
    for (level, w) in widths.iter_mut().enumerate() {
        *w = stage_width(cfg.base_channels, level as u32, cfg.depth_scale);
    }
    Plan { widths }
}

pub(super) fn init(cfg: &ModelConfig, ps: &mut ParameterSet, rng: &mut ChaCha8Rng) {
    let p = plan(cfg);
    let mut cin = 3;
    for i in 0..LEVELS {
        let w = p.widths[i];
        init_conv_bn(ps, rng, &format!("enc{}.conv1", i + 1), 3, cin, w);
        init_conv_bn(ps, rng, &format!("enc{}.conv2", i + 1), 3, w, w);
        cin = w;
    }
    let mid = p.widths[LEVELS];
    init_conv_bn(ps, rng, "mid.conv1", 3, cin, mid);
    init_conv_bn(ps, rng, "mid.conv2", 3, mid, mid);
    let mut above = mid;
    for i in (0..LEVELS).rev() {
        let w = p.widths[i];
        init_deconv(ps, rng, &format!("dec{}.up", i + 1), 2, above, w);
        init_conv_bn(ps, rng, &format!("dec{}.conv1", i + 1), 3, 2 * w, w);
        init_conv_bn(ps, rng, &format!("dec{}.conv2", i + 1), 3, w, w);
        above = w;
    }
    init_conv(ps, rng, "head.conv", 1, above, 1, true);
}

pub(super) fn forward(fw: &mut Fwd, _cfg: &ModelConfig, x: NodeId) -> Result<NodeId, GraphError> {
    let mut skips = Vec::with_capacity(LEVELS);
    let mut cur = x;
    for i in 0..LEVELS {
        cur = fw.conv_bn_relu(&format!("enc{}.conv1", i + 1), cur, 1, 1)?;
        cur = fw.conv_bn_relu(&format!("enc{}.conv2", i + 1), cur, 1, 1)?;
        skips.push(cur);
        cur = fw.g.max_pool2d(cur, 2)?;
    }
    cur = fw.conv_bn_relu("mid.conv1", cur, 1, 1)?;
    cur = fw.conv_bn_relu("mid.conv2", cur, 1, 1)?;
    for i in (0..LEVELS).rev() {
        cur = fw.deconv(&format!("dec{}.up", i + 1), cur, 2)?;
        cur = fw.g.concat_channels(cur, skips[i])?;
        cur = fw.conv_bn_relu(&format!("dec{}.conv1", i + 1), cur, 1, 1)?;
        cur = fw.conv_bn_relu(&format!("dec{}.conv2", i + 1), cur, 1, 1)?;
    }
    fw.conv("head.conv", cur, 1, 1)
}

pub(super) fn receptive_field(_cfg: &ModelConfig) -> usize {
    let mut rf = ReceptiveField::new();
    for _ in 0..LEVELS {
        rf.conv(3, 1, 1).conv(3, 1, 1).pool(2);
    }
    rf.conv(3, 1, 1).conv(3, 1, 1);
    for _ in 0..LEVELS {
        rf.deconv(2, 2).conv(3, 1, 1).conv(3, 1, 1);
    }
    rf.conv(1, 1, 1);
    rf.field()
}
