//! Convolution forward/backward: im2col + GEMM for the strided/dilated
//! cross-correlation, direct scatter/gather loops for the transposed form.

use super::{acc, shape_err, Graph, GraphError, Node, NodeId};
use crate::tensor::{Real, Tensor};

/// Spatial padding policy for [`Graph::conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero-pad so output dims are `ceil(in / stride)`.
    Same,
    /// No padding; the effective kernel must fit inside the input.
    Valid,
}

pub(super) struct Geom {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    pad_top: usize,
    pad_left: usize,
    oh: usize,
    ow: usize,
}

pub(super) struct ConvCtx {
    x: NodeId,
    w: NodeId,
    b: Option<NodeId>,
    geom: Geom,
    /// Saved im2col matrix, `(k*k*cin) x (n*oh*ow)` row-major.
    cols: Vec<Real>,
}

pub(super) struct ConvTCtx {
    x: NodeId,
    w: NodeId,
    stride: usize,
    pad: usize,
    k: usize,
    n: usize,
    h: usize,
    w_in: usize,
    cin: usize,
    cout: usize,
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

fn conv_geom(
    xshape: (usize, usize, usize, usize),
    wshape: &[usize],
    stride: usize,
    dilation: usize,
    padding: Padding,
) -> Result<Geom, GraphError> {
    let (n, h, w, cin) = xshape;
    let [cout, kh, kw, wcin] = *wshape else {
        return Err(shape_err("conv2d", format!("kernel must be rank 4 [out,k,k,in], got {wshape:?}")));
    };
    if kh != kw || kh % 2 == 0 {
        return Err(shape_err("conv2d", format!("kernel spatial dims must be square and odd, got {kh}x{kw}")));
    }
    if wcin != cin {
        return Err(shape_err("conv2d", format!("kernel expects {wcin} input channels, input has {cin}")));
    }
    if stride == 0 || dilation == 0 {
        return Err(shape_err("conv2d", "stride and dilation must be >= 1"));
    }
    let k_eff = dilation * (kh - 1) + 1;
    let (oh, ow, pad_top, pad_left) = match padding {
        Padding::Same => {
            let oh = ceil_div(h, stride);
            let ow = ceil_div(w, stride);
            let pad_h = ((oh - 1) * stride + k_eff).saturating_sub(h);
            let pad_w = ((ow - 1) * stride + k_eff).saturating_sub(w);
            (oh, ow, pad_h / 2, pad_w / 2)
        }
        Padding::Valid => {
            if h < k_eff || w < k_eff {
                return Err(shape_err(
                    "conv2d",
                    format!("valid padding needs input >= effective kernel {k_eff}, got {h}x{w}"),
                ));
            }
            ((h - k_eff) / stride + 1, (w - k_eff) / stride + 1, 0, 0)
        }
    };
    Ok(Geom { n, h, w, cin, cout, k: kh, stride, dilation, pad_top, pad_left, oh, ow })
}

fn im2col(xd: &[Real], g: &Geom) -> Vec<Real> {
    let j_total = g.n * g.oh * g.ow;
    let mut cols = vec![0.0; g.k * g.k * g.cin * j_total];
    for ky in 0..g.k {
        for kx in 0..g.k {
            for c in 0..g.cin {
                let row = (ky * g.k + kx) * g.cin + c;
                let base = row * j_total;
                for nn in 0..g.n {
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ky * g.dilation) as isize - g.pad_top as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let jrow = (nn * g.oh + oy) * g.ow;
                        for ox in 0..g.ow {
                            let ix = (ox * g.stride + kx * g.dilation) as isize - g.pad_left as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            cols[base + jrow + ox] =
                                xd[Tensor::nhwc_index(g.h, g.w, g.cin, nn, iy as usize, ix as usize, c)];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &[Real], dx: &mut [Real], g: &Geom) {
    let j_total = g.n * g.oh * g.ow;
    for ky in 0..g.k {
        for kx in 0..g.k {
            for c in 0..g.cin {
                let row = (ky * g.k + kx) * g.cin + c;
                let base = row * j_total;
                for nn in 0..g.n {
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ky * g.dilation) as isize - g.pad_top as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let jrow = (nn * g.oh + oy) * g.ow;
                        for ox in 0..g.ow {
                            let ix = (ox * g.stride + kx * g.dilation) as isize - g.pad_left as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            dx[Tensor::nhwc_index(g.h, g.w, g.cin, nn, iy as usize, ix as usize, c)] +=
                                dcols[base + jrow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `C[m x n] += A[m x k] * B[k x n]` with arbitrary strides, row-major `C`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[Real],
    rsa: isize,
    csa: isize,
    b: &[Real],
    rsb: isize,
    csb: isize,
    c: &mut [Real],
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    unsafe {
        #[cfg(not(feature = "f64"))]
        matrixmultiply::sgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, 0.0, c.as_mut_ptr(), n as isize, 1,
        );
        #[cfg(feature = "f64")]
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, 0.0, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

pub(super) fn conv2d_forward(
    g: &Graph,
    x: NodeId,
    w: NodeId,
    b: Option<NodeId>,
    stride: usize,
    dilation: usize,
    padding: Padding,
) -> Result<(Tensor, ConvCtx), GraphError> {
    let xshape = g.nhwc(x, "conv2d")?;
    let geom = conv_geom(xshape, g.value(w).shape(), stride, dilation, padding)?;
    if let Some(bid) = b {
        if g.value(bid).numel() != geom.cout {
            return Err(shape_err(
                "conv2d",
                format!("bias has {} elements, kernel has {} output channels", g.value(bid).numel(), geom.cout),
            ));
        }
    }
    let cols = im2col(g.value(x).data(), &geom);
    let kk = geom.k * geom.k * geom.cin;
    let j_total = geom.n * geom.oh * geom.ow;
    let mut out = vec![0.0; j_total * geom.cout];
    // out[j][co] = sum_kk cols[kk][j] * w[co][kk]
    gemm(
        j_total,
        kk,
        geom.cout,
        &cols,
        1,
        j_total as isize,
        g.value(w).data(),
        1,
        kk as isize,
        &mut out,
    );
    if let Some(bid) = b {
        let bd = g.value(bid).data();
        for row in out.chunks_exact_mut(geom.cout) {
            for (o, &bv) in row.iter_mut().zip(bd) {
                *o += bv;
            }
        }
    }
    let value = Tensor::from_vec(&[geom.n, geom.oh, geom.ow, geom.cout], out);
    Ok((value, ConvCtx { x, w, b, geom, cols }))
}

pub(super) fn conv2d_backward(nodes: &[Node], ctx: &ConvCtx, gy: &[Real], grads: &mut [Option<Vec<Real>>]) {
    let geom = &ctx.geom;
    let kk = geom.k * geom.k * geom.cin;
    let j_total = geom.n * geom.oh * geom.ow;

    // dW[co][kk] = sum_j gy[j][co] * cols[kk][j]
    let mut dw = vec![0.0; geom.cout * kk];
    gemm(geom.cout, j_total, kk, gy, 1, geom.cout as isize, &ctx.cols, 1, j_total as isize, &mut dw);
    {
        let dst = acc(&mut grads[ctx.w.0], dw.len());
        for (d, s) in dst.iter_mut().zip(&dw) {
            *d += *s;
        }
    }

    if let Some(bid) = ctx.b {
        let db = acc(&mut grads[bid.0], geom.cout);
        for row in gy.chunks_exact(geom.cout) {
            for (d, &gv) in db.iter_mut().zip(row) {
                *d += gv;
            }
        }
    }

    // dcols[kk][j] = sum_co w[co][kk] * gy[j][co], then scatter to dx.
    let wd = nodes[ctx.w.0].value.data();
    let mut dcols = vec![0.0; kk * j_total];
    gemm(kk, geom.cout, j_total, wd, 1, kk as isize, gy, 1, geom.cout as isize, &mut dcols);
    let dx = acc(&mut grads[ctx.x.0], nodes[ctx.x.0].value.numel());
    col2im(&dcols, dx, geom);
}

pub(super) fn conv_t2d_forward(
    g: &Graph,
    x: NodeId,
    w: NodeId,
    stride: usize,
) -> Result<(Tensor, ConvTCtx), GraphError> {
    let (n, h, w_in, cin) = g.nhwc(x, "transposed_conv2d")?;
    let [wcin, kh, kw, cout] = *g.value(w).shape() else {
        return Err(shape_err(
            "transposed_conv2d",
            format!("kernel must be rank 4 [in,k,k,out], got {:?}", g.value(w).shape()),
        ));
    };
    if kh != kw {
        return Err(shape_err("transposed_conv2d", format!("kernel must be square, got {kh}x{kw}")));
    }
    if wcin != cin {
        return Err(shape_err(
            "transposed_conv2d",
            format!("kernel expects {wcin} input channels, input has {cin}"),
        ));
    }
    if stride == 0 || kh < stride || (kh - stride) % 2 != 0 {
        return Err(shape_err(
            "transposed_conv2d",
            format!("kernel {kh} and stride {stride} must satisfy k >= s with k - s even"),
        ));
    }
    let pad = (kh - stride) / 2;
    let (oh, ow) = (h * stride, w_in * stride);
    let xd = g.value(x).data();
    let wd = g.value(w).data();
    let mut out = vec![0.0; n * oh * ow * cout];

    if kh == stride {
        // k == stride writes disjoint k x k blocks: one GEMM from the NHWC
        // rows to [k*k*cout] block rows, then a pixel-shuffle scatter.
        let j_total = n * h * w_in;
        let block = kh * kh * cout;
        let mut rows = vec![0.0; j_total * block];
        gemm(j_total, cin, block, xd, cin as isize, 1, wd, block as isize, 1, &mut rows);
        for nn in 0..n {
            for iy in 0..h {
                for ix in 0..w_in {
                    let row = &rows[((nn * h + iy) * w_in + ix) * block..][..block];
                    for ky in 0..kh {
                        let dst = Tensor::nhwc_index(oh, ow, cout, nn, iy * stride + ky, ix * stride, 0);
                        out[dst..dst + kh * cout].copy_from_slice(&row[ky * kh * cout..(ky + 1) * kh * cout]);
                    }
                }
            }
        }
        let value = Tensor::from_vec(&[n, oh, ow, cout], out);
        return Ok((value, ConvTCtx { x, w, stride, pad, k: kh, n, h, w_in, cin, cout }));
    }

    for nn in 0..n {
        for iy in 0..h {
            for ix in 0..w_in {
                let xbase = Tensor::nhwc_index(h, w_in, cin, nn, iy, ix, 0);
                for ky in 0..kh {
                    let oy = (iy * stride + ky) as isize - pad as isize;
                    if oy < 0 || oy >= oh as isize {
                        continue;
                    }
                    for kx in 0..kh {
                        let ox = (ix * stride + kx) as isize - pad as isize;
                        if ox < 0 || ox >= ow as isize {
                            continue;
                        }
                        let obase = Tensor::nhwc_index(oh, ow, cout, nn, oy as usize, ox as usize, 0);
                        for ci in 0..cin {
                            let xv = xd[xbase + ci];
                            if xv == 0.0 {
                                continue;
                            }
                            let wbase = ((ci * kh + ky) * kh + kx) * cout;
                            for co in 0..cout {
                                out[obase + co] += xv * wd[wbase + co];
                            }
                        }
                    }
                }
            }
        }
    }
    let value = Tensor::from_vec(&[n, oh, ow, cout], out);
    Ok((value, ConvTCtx { x, w, stride, pad, k: kh, n, h, w_in, cin, cout }))
}

pub(super) fn conv_t2d_backward(nodes: &[Node], ctx: &ConvTCtx, gy: &[Real], grads: &mut [Option<Vec<Real>>]) {
    let (n, h, w_in, cin, cout, k, stride, pad) =
        (ctx.n, ctx.h, ctx.w_in, ctx.cin, ctx.cout, ctx.k, ctx.stride, ctx.pad);
    let (oh, ow) = (h * stride, w_in * stride);
    let xd = nodes[ctx.x.0].value.data();
    let wd = nodes[ctx.w.0].value.data();

    if k == stride {
        // Mirror of the forward fast path: gather gy into block rows, then
        // dX = rows * W^T and dW = X^T * rows as two GEMMs.
        let j_total = n * h * w_in;
        let block = k * k * cout;
        let mut rows = vec![0.0; j_total * block];
        for nn in 0..n {
            for iy in 0..h {
                for ix in 0..w_in {
                    let row = &mut rows[((nn * h + iy) * w_in + ix) * block..][..block];
                    for ky in 0..k {
                        let src = Tensor::nhwc_index(oh, ow, cout, nn, iy * stride + ky, ix * stride, 0);
                        row[ky * k * cout..(ky + 1) * k * cout].copy_from_slice(&gy[src..src + k * cout]);
                    }
                }
            }
        }
        let mut dx_rows = vec![0.0; j_total * cin];
        gemm(j_total, block, cin, &rows, block as isize, 1, wd, 1, block as isize, &mut dx_rows);
        let dx = acc(&mut grads[ctx.x.0], xd.len());
        for (d, s) in dx.iter_mut().zip(&dx_rows) {
            *d += *s;
        }
        let mut dw = vec![0.0; wd.len()];
        gemm(cin, j_total, block, xd, 1, cin as isize, &rows, block as isize, 1, &mut dw);
        let dst = acc(&mut grads[ctx.w.0], dw.len());
        for (d, s) in dst.iter_mut().zip(&dw) {
            *d += *s;
        }
        return;
    }

    let mut dw = vec![0.0; wd.len()];
    {
        let dx = acc(&mut grads[ctx.x.0], xd.len());
        for nn in 0..n {
            for iy in 0..h {
                for ix in 0..w_in {
                    let xbase = Tensor::nhwc_index(h, w_in, cin, nn, iy, ix, 0);
                    for ky in 0..k {
                        let oy = (iy * stride + ky) as isize - pad as isize;
                        if oy < 0 || oy >= oh as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ox = (ix * stride + kx) as isize - pad as isize;
                            if ox < 0 || ox >= ow as isize {
                                continue;
                            }
                            let obase = Tensor::nhwc_index(oh, ow, cout, nn, oy as usize, ox as usize, 0);
                            for ci in 0..cin {
                                let wbase = ((ci * k + ky) * k + kx) * cout;
                                let mut acc_dx = 0.0;
                                for co in 0..cout {
                                    let g = gy[obase + co];
                                    acc_dx += g * wd[wbase + co];
                                    dw[wbase + co] += g * xd[xbase + ci];
                                }
                                dx[xbase + ci] += acc_dx;
                            }
                        }
                    }
                }
            }
        }
    }
    let dst = acc(&mut grads[ctx.w.0], dw.len());
    for (d, s) in dst.iter_mut().zip(&dw) {
        *d += *s;
    }
}
