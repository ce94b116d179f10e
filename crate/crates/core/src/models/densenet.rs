//! Densely connected encoder/decoder. Every layer in a dense block is a
//! 3x3 conv-bn-relu producing `growth_rate` channels whose input is the
//! concatenation of the block input and all previous layer outputs in the
//! block. Transitions down are a 1x1 conv-bn-relu followed by a 2x2 max
//! pool; transitions up are 2x2 stride-2 transposed convolutions applied to
//! the newly grown features only, concatenated with the matching encoder
//! skip. A 1x1 head reads the final concatenation.
//!
//! The depth names count parameterized layers at scale 1: stem + dense
//! layers + 5 transitions each way + head. Block sizes 4,4,4,4,4 / 4 /
//! 4,4,4,4,4 give 56; 4,5,7,10,12 / 15 / 12,10,7,5,4 give 103.

use rand_chacha::ChaCha8Rng;

use super::common::{init_conv, init_conv_bn, init_deconv, scaled_count, Fwd};
use super::rf::ReceptiveField;
use super::{Arch, ModelConfig};
use crate::graph::{GraphError, NodeId};
use crate::params::ParameterSet;

const DEPTH: usize = 5;

struct Plan {
    down: [usize; DEPTH],
    mid: usize,
    up: [usize; DEPTH],
    growth: usize,
}

fn plan(cfg: &ModelConfig) -> Plan {
    let (down_full, mid_full, up_full): ([usize; DEPTH], usize, [usize; DEPTH]) = match cfg.arch {
        Arch::DensenetD103 => ([4, 5, 7, 10, 12], 15, [12, 10, 7, 5, 4]),
        _ => ([4; DEPTH], 4, [4; DEPTH]),
    };
    let mut down = [0; DEPTH];
    let mut up = [0; DEPTH];
    for i in 0..DEPTH {
        down[i] = scaled_count(down_full[i], cfg.depth_scale);
        up[i] = scaled_count(up_full[i], cfg.depth_scale);
    }
    Plan { down, mid: scaled_count(mid_full, cfg.depth_scale), up, growth: cfg.growth_rate }
}

fn init_dense_block(
    ps: &mut ParameterSet,
    rng: &mut ChaCha8Rng,
    name: &str,
    layers: usize,
    cin: usize,
    growth: usize,
) -> usize {
    let mut total = cin;
    for l in 0..layers {
        init_conv_bn(ps, rng, &format!("{name}.l{}", l + 1), 3, total, growth);
        total += growth;
    }
    total
}

/// Runs a dense block; returns (all channels, newly grown channels).
fn dense_block(
    fw: &mut Fwd,
    name: &str,
    layers: usize,
    x: NodeId,
) -> Result<(NodeId, NodeId), GraphError> {
    let mut full = x;
    let mut new: Option<NodeId> = None;
    for l in 0..layers {
        let y = fw.conv_bn_relu(&format!("{name}.l{}", l + 1), full, 1, 1)?;
        full = fw.g.concat_channels(full, y)?;
        new = Some(match new {
            Some(n) => fw.g.concat_channels(n, y)?,
            None => y,
        });
    }
    Ok((full, new.expect("dense block has at least one layer")))
}

pub(super) fn init(cfg: &ModelConfig, ps: &mut ParameterSet, rng: &mut ChaCha8Rng) {
    let p = plan(cfg);
    init_conv_bn(ps, rng, "stem.conv", 3, 3, cfg.base_channels);
    let mut ch = cfg.base_channels;
    let mut skip_ch = [0; DEPTH];
    for i in 0..DEPTH {
        ch = init_dense_block(ps, rng, &format!("down{}.db", i + 1), p.down[i], ch, p.growth);
        skip_ch[i] = ch;
        init_conv_bn(ps, rng, &format!("down{}.td", i + 1), 1, ch, ch);
    }
    ch = init_dense_block(ps, rng, "mid.db", p.mid, ch, p.growth);
    let mut new_ch = p.mid * p.growth;
    for i in (0..DEPTH).rev() {
        init_deconv(ps, rng, &format!("up{}.tu", i + 1), 2, new_ch, new_ch);
        ch = new_ch + skip_ch[i];
        ch = init_dense_block(ps, rng, &format!("up{}.db", i + 1), p.up[i], ch, p.growth);
        new_ch = p.up[i] * p.growth;
    }
    init_conv(ps, rng, "head.conv", 1, ch, 1, true);
}

pub(super) fn forward(fw: &mut Fwd, cfg: &ModelConfig, x: NodeId) -> Result<NodeId, GraphError> {
    let p = plan(cfg);
    let mut cur = fw.conv_bn_relu("stem.conv", x, 1, 1)?;
    let mut skips = Vec::with_capacity(DEPTH);
    for i in 0..DEPTH {
        let (full, _) = dense_block(fw, &format!("down{}.db", i + 1), p.down[i], cur)?;
        skips.push(full);
        let td = fw.conv_bn_relu(&format!("down{}.td", i + 1), full, 1, 1)?;
        cur = fw.g.max_pool2d(td, 2)?;
    }
    let (_, mut new) = dense_block(fw, "mid.db", p.mid, cur)?;
    let mut full = new;
    for i in (0..DEPTH).rev() {
        let up = fw.deconv(&format!("up{}.tu", i + 1), new, 2)?;
        let cat = fw.g.concat_channels(up, skips[i])?;
        (full, new) = dense_block(fw, &format!("up{}.db", i + 1), p.up[i], cat)?;
    }
    fw.conv("head.conv", full, 1, 1)
}

pub(super) fn receptive_field(cfg: &ModelConfig) -> usize {
    let p = plan(cfg);
    let mut rf = ReceptiveField::new();
    rf.conv(3, 1, 1);
    for i in 0..DEPTH {
        // Deepest path threads every layer of each block.
        for _ in 0..p.down[i] {
            rf.conv(3, 1, 1);
        }
        rf.conv(1, 1, 1).pool(2);
    }
    for _ in 0..p.mid {
        rf.conv(3, 1, 1);
    }
    for i in (0..DEPTH).rev() {
        rf.deconv(2, 2);
        for _ in 0..p.up[i] {
            rf.conv(3, 1, 1);
        }
    }
    rf.conv(1, 1, 1);
    rf.field()
}
