//! Forward/backward math for the structural and normalization ops.

use super::{acc, BnCtx, Node, NodeId, BN_EPSILON};
use crate::tensor::{Real, Tensor};

pub(super) fn relu_forward(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::from_vec(x.shape(), data)
}

pub(super) fn max_pool_forward(
    x: &Tensor,
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    window: usize,
) -> (Tensor, Vec<u32>) {
    let (oh, ow) = (h / window, w / window);
    let xd = x.data();
    let mut out = vec![0.0; n * oh * ow * c];
    let mut argmax = vec![0u32; out.len()];
    for nn in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = Real::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for ky in 0..window {
                        for kx in 0..window {
                            let idx = Tensor::nhwc_index(h, w, c, nn, oy * window + ky, ox * window + kx, ch);
                            if xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = Tensor::nhwc_index(oh, ow, c, nn, oy, ox, ch);
                    out[o] = best;
                    argmax[o] = best_idx as u32;
                }
            }
        }
    }
    (Tensor::from_vec(&[n, oh, ow, c], out), argmax)
}

pub(super) fn upsample_forward(x: &Tensor, n: usize, h: usize, w: usize, c: usize, factor: usize) -> Tensor {
    let (oh, ow) = (h * factor, w * factor);
    let xd = x.data();
    let mut out = vec![0.0; n * oh * ow * c];
    for nn in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let src = Tensor::nhwc_index(h, w, c, nn, oy / factor, ox / factor, 0);
                let dst = Tensor::nhwc_index(oh, ow, c, nn, oy, ox, 0);
                out[dst..dst + c].copy_from_slice(&xd[src..src + c]);
            }
        }
    }
    Tensor::from_vec(&[n, oh, ow, c], out)
}

/// `gy` is over the upsampled dims; `dst` over the input dims `n,h,w,c`.
pub(super) fn upsample_backward(gy: &[Real], dst: &mut [Real], n: usize, h: usize, w: usize, c: usize, factor: usize) {
    let (oh, ow) = (h * factor, w * factor);
    for nn in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let src = Tensor::nhwc_index(oh, ow, c, nn, oy, ox, 0);
                let d = Tensor::nhwc_index(h, w, c, nn, oy / factor, ox / factor, 0);
                for ch in 0..c {
                    dst[d + ch] += gy[src + ch];
                }
            }
        }
    }
}

pub(super) fn concat_forward(a: &Tensor, b: &Tensor, n: usize, h: usize, w: usize, ca: usize, cb: usize) -> Tensor {
    let rows = n * h * w;
    let (ad, bd) = (a.data(), b.data());
    let ct = ca + cb;
    let mut out = vec![0.0; rows * ct];
    for r in 0..rows {
        out[r * ct..r * ct + ca].copy_from_slice(&ad[r * ca..(r + 1) * ca]);
        out[r * ct + ca..(r + 1) * ct].copy_from_slice(&bd[r * cb..(r + 1) * cb]);
    }
    Tensor::from_vec(&[n, h, w, ca + cb], out)
}

/// Scatters the `c_this`-wide channel slice at `offset` of a `c_total`-wide
/// gradient back into one concat operand.
pub(super) fn concat_backward_half(gy: &[Real], dst: &mut [Real], rows: usize, c_this: usize, c_total: usize, offset: usize) {
    for r in 0..rows {
        let src = r * c_total + offset;
        let d = r * c_this;
        for ch in 0..c_this {
            dst[d + ch] += gy[src + ch];
        }
    }
}

fn bn_normalize(
    x: &Tensor,
    gamma: &[Real],
    beta: &[Real],
    mean: &[Real],
    inv_std: &[Real],
    c: usize,
) -> Tensor {
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for (i, &v) in xd.iter().enumerate() {
        let ch = i % c;
        out[i] = gamma[ch] * (v - mean[ch]) * inv_std[ch] + beta[ch];
    }
    Tensor::from_vec(x.shape(), out)
}

#[allow(clippy::too_many_arguments)]
pub(super) fn bn_train_forward(
    x: &Tensor,
    gamma: &[Real],
    beta: &[Real],
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    ids: (NodeId, NodeId, NodeId),
    stats_key: Option<String>,
) -> (Tensor, BnCtx) {
    let m = (n * h * w) as Real;
    let xd = x.data();
    let mut mean = vec![0.0; c];
    for (i, &v) in xd.iter().enumerate() {
        mean[i % c] += v;
    }
    for mu in &mut mean {
        *mu /= m;
    }
    let mut var = vec![0.0; c];
    for (i, &v) in xd.iter().enumerate() {
        let d = v - mean[i % c];
        var[i % c] += d * d;
    }
    for s2 in &mut var {
        *s2 /= m;
    }
    let inv_std: Vec<Real> = var.iter().map(|&s2| 1.0 / (s2 + BN_EPSILON).sqrt()).collect();
    let value = bn_normalize(x, gamma, beta, &mean, &inv_std, c);
    let ctx = BnCtx {
        x: ids.0,
        gamma: ids.1,
        beta: ids.2,
        mean,
        var,
        inv_std,
        train: true,
        stats_key,
    };
    (value, ctx)
}

#[allow(clippy::too_many_arguments)]
pub(super) fn bn_eval_forward(
    x: &Tensor,
    gamma: &[Real],
    beta: &[Real],
    running_mean: &[Real],
    running_var: &[Real],
    _n: usize,
    _h: usize,
    _w: usize,
    c: usize,
    ids: (NodeId, NodeId, NodeId),
) -> (Tensor, BnCtx) {
    let inv_std: Vec<Real> = running_var.iter().map(|&s2| 1.0 / (s2 + BN_EPSILON).sqrt()).collect();
    let value = bn_normalize(x, gamma, beta, running_mean, &inv_std, c);
    let ctx = BnCtx {
        x: ids.0,
        gamma: ids.1,
        beta: ids.2,
        mean: running_mean.to_vec(),
        var: running_var.to_vec(),
        inv_std,
        train: false,
        stats_key: None,
    };
    (value, ctx)
}

pub(super) fn bn_backward(nodes: &[Node], ctx: &BnCtx, gy: &[Real], grads: &mut [Option<Vec<Real>>]) {
    let x = &nodes[ctx.x.0].value;
    let gamma = nodes[ctx.gamma.0].value.data();
    let c = gamma.len();
    let m = (x.numel() / c) as Real;
    let xd = x.data();

    let mut dbeta = vec![0.0; c];
    let mut dgamma = vec![0.0; c];
    for (i, &g) in gy.iter().enumerate() {
        let ch = i % c;
        let xhat = (xd[i] - ctx.mean[ch]) * ctx.inv_std[ch];
        dbeta[ch] += g;
        dgamma[ch] += g * xhat;
    }

    {
        let dx = acc(&mut grads[ctx.x.0], xd.len());
        if ctx.train {
            for (i, &g) in gy.iter().enumerate() {
                let ch = i % c;
                let xhat = (xd[i] - ctx.mean[ch]) * ctx.inv_std[ch];
                dx[i] += gamma[ch] * ctx.inv_std[ch] * (g - dbeta[ch] / m - xhat * dgamma[ch] / m);
            }
        } else {
            for (i, &g) in gy.iter().enumerate() {
                let ch = i % c;
                dx[i] += g * gamma[ch] * ctx.inv_std[ch];
            }
        }
    }

    let dg = acc(&mut grads[ctx.gamma.0], c);
    for (d, s) in dg.iter_mut().zip(&dgamma) {
        *d += *s;
    }
    let db = acc(&mut grads[ctx.beta.0], c);
    for (d, s) in db.iter_mut().zip(&dbeta) {
        *d += *s;
    }
}
