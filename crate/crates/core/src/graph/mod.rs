//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! A [`Graph`] records one forward pass as a flat list of nodes; calling
//! [`Graph::backward`] on a scalar loss walks the tape in reverse and
//! accumulates gradients into the [`ParameterSet`] entries that fed the
//! graph. A fresh graph is recorded per forward pass, so patch shapes may
//! vary freely between steps.

mod conv;
mod ops;

pub use conv::Padding;

use crate::params::ParameterSet;
use crate::tensor::{Real, Tensor};

/// Numerical floor added to batch-norm variances before the square root.
pub const BN_EPSILON: Real = 1e-5;

/// Momentum for batch-norm running statistics:
/// `running = momentum * running + (1 - momentum) * batch`.
pub const BN_MOMENTUM: Real = 0.9;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// Whether batch normalization uses batch statistics (`Train`) or the
/// stored running statistics (`Eval`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward requires a scalar loss node")]
    NotScalar,
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}

fn shape_err(op: &'static str, detail: impl Into<String>) -> GraphError {
    GraphError::ShapeMismatch { op, detail: detail.into() }
}

/// Saved context of a train-mode batch-norm node, used both in backward
/// and when committing running statistics.
struct BnCtx {
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    mean: Vec<Real>,
    var: Vec<Real>,
    inv_std: Vec<Real>,
    train: bool,
    /// Parameter-name prefix whose `.running_mean` / `.running_var`
    /// buffers receive the batch moments on commit (train mode only).
    stats_key: Option<String>,
}

enum Op {
    Input,
    Param(String),
    Conv2d(conv::ConvCtx),
    ConvT2d(conv::ConvTCtx),
    Relu { x: NodeId },
    MaxPool { x: NodeId, argmax: Vec<u32> },
    Upsample { x: NodeId, factor: usize },
    ConcatC { a: NodeId, b: NodeId, ca: usize, cb: usize },
    Add { a: NodeId, b: NodeId },
    BatchNorm(BnCtx),
    Sigmoid { x: NodeId },
    BceMean { z: NodeId, target: Vec<Real>, weight: Vec<Real>, wsum: Real },
    WeightedSum { x: NodeId, weights: Vec<Real> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// A recorded forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<Real>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a constant input (image batches, probe tensors).
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Input)
    }

    /// Records a parameter leaf by name; gradients reaching it accumulate
    /// into the parameter set passed to [`Graph::backward`].
    pub fn param(&mut self, ps: &ParameterSet, name: &str) -> Result<NodeId, GraphError> {
        let t = ps
            .get(name)
            .ok_or_else(|| GraphError::UnknownParameter(name.to_string()))?
            .clone();
        Ok(self.push(t, Op::Param(name.to_string())))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward pass with respect to node `id`, if the
    /// loss depended on it.
    pub fn grad(&self, id: NodeId) -> Option<&[Real]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    fn nhwc(&self, id: NodeId, op: &'static str) -> Result<(usize, usize, usize, usize), GraphError> {
        self.nodes[id.0]
            .value
            .nhwc()
            .ok_or_else(|| shape_err(op, format!("expected NHWC tensor, got shape {:?}", self.nodes[id.0].value.shape())))
    }

    /// Strided cross-correlation over NHWC input.
    ///
    /// `weight` is `[out_c, k, k, in_c]` with odd `k`; `same` padding keeps
    /// `out = ceil(in / stride)` per spatial dim, `valid` requires the
    /// effective kernel `dilation*(k-1)+1` to fit.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        dilation: usize,
        padding: Padding,
    ) -> Result<NodeId, GraphError> {
        let (value, ctx) = conv::conv2d_forward(self, x, weight, bias, stride, dilation, padding)?;
        Ok(self.push(value, Op::Conv2d(ctx)))
    }

    /// Transposed convolution (adjoint of a `same`-padded strided conv):
    /// output spatial dims are `in * stride`.
    ///
    /// `weight` is `[in_c, k, k, out_c]`; requires `k >= stride` with
    /// `k - stride` even so the implicit crop is symmetric.
    pub fn transposed_conv2d(&mut self, x: NodeId, weight: NodeId, stride: usize) -> Result<NodeId, GraphError> {
        let (value, ctx) = conv::conv_t2d_forward(self, x, weight, stride)?;
        Ok(self.push(value, Op::ConvT2d(ctx)))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = ops::relu_forward(self.value(x));
        self.push(value, Op::Relu { x })
    }

    /// Non-overlapping max pooling with a square `window` (stride = window).
    pub fn max_pool2d(&mut self, x: NodeId, window: usize) -> Result<NodeId, GraphError> {
        let (n, h, w, c) = self.nhwc(x, "max_pool2d")?;
        if window == 0 || h % window != 0 || w % window != 0 {
            return Err(shape_err(
                "max_pool2d",
                format!("spatial dims {h}x{w} not divisible by window {window}"),
            ));
        }
        let (value, argmax) = ops::max_pool_forward(self.value(x), n, h, w, c, window);
        Ok(self.push(value, Op::MaxPool { x, argmax }))
    }

    /// Nearest-neighbor upsampling by an integer `factor`.
    pub fn nearest_upsample(&mut self, x: NodeId, factor: usize) -> Result<NodeId, GraphError> {
        let (n, h, w, c) = self.nhwc(x, "nearest_upsample")?;
        if factor == 0 {
            return Err(shape_err("nearest_upsample", "factor must be >= 1"));
        }
        let value = ops::upsample_forward(self.value(x), n, h, w, c, factor);
        Ok(self.push(value, Op::Upsample { x, factor }))
    }

    /// Concatenates two NHWC tensors along the channel axis.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (na, ha, wa, ca) = self.nhwc(a, "concat_channels")?;
        let (nb, hb, wb, cb) = self.nhwc(b, "concat_channels")?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(shape_err(
                "concat_channels",
                format!("spatial dims differ: {:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let value = ops::concat_forward(self.value(a), self.value(b), na, ha, wa, ca, cb);
        Ok(self.push(value, Op::ConcatC { a, b, ca, cb }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut data = self.value(a).data().to_vec();
        for (d, s) in data.iter_mut().zip(self.value(b).data()) {
            *d += *s;
        }
        let value = Tensor::from_vec(self.value(a).shape(), data);
        Ok(self.push(value, Op::Add { a, b }))
    }

    /// Batch normalization over the batch and spatial axes, per channel.
    ///
    /// In `Train` mode the batch moments (biased variance) normalize the
    /// input and are saved; [`Graph::commit_bn_stats`] later folds them
    /// into the running buffers named `{stats_key}.running_mean` /
    /// `{stats_key}.running_var`. In `Eval` mode those running buffers are
    /// read from `ps` and used directly.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mode: Mode,
        ps: &ParameterSet,
        stats_key: &str,
    ) -> Result<NodeId, GraphError> {
        let (n, h, w, c) = self.nhwc(x, "batch_norm")?;
        for (id, role) in [(gamma, "gamma"), (beta, "beta")] {
            if self.value(id).numel() != c {
                return Err(shape_err(
                    "batch_norm",
                    format!("{role} has {} elements, input has {c} channels", self.value(id).numel()),
                ));
            }
        }
        let (value, ctx) = match mode {
            Mode::Train => ops::bn_train_forward(
                self.value(x),
                self.value(gamma).data(),
                self.value(beta).data(),
                n,
                h,
                w,
                c,
                (x, gamma, beta),
                Some(stats_key.to_string()),
            ),
            Mode::Eval => {
                let mean = ps
                    .get(&format!("{stats_key}.running_mean"))
                    .ok_or_else(|| GraphError::UnknownParameter(format!("{stats_key}.running_mean")))?;
                let var = ps
                    .get(&format!("{stats_key}.running_var"))
                    .ok_or_else(|| GraphError::UnknownParameter(format!("{stats_key}.running_var")))?;
                if mean.numel() != c || var.numel() != c {
                    return Err(shape_err("batch_norm", "running statistic length differs from channel count"));
                }
                ops::bn_eval_forward(
                    self.value(x),
                    self.value(gamma).data(),
                    self.value(beta).data(),
                    mean.data(),
                    var.data(),
                    n,
                    h,
                    w,
                    c,
                    (x, gamma, beta),
                )
            }
        };
        Ok(self.push(value, Op::BatchNorm(ctx)))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).data().iter().map(|&z| stable_sigmoid(z)).collect();
        let value = Tensor::from_vec(self.value(x).shape(), data);
        self.push(value, Op::Sigmoid { x })
    }

    /// Weighted-mean binary cross-entropy on logits, fused stable form
    /// `max(z,0) - z*y + ln(1 + exp(-|z|))` averaged over `weight = 1`
    /// elements. All-zero weights yield loss 0 with zero gradient.
    pub fn bce_mean(&mut self, z: NodeId, target: &Tensor, weight: &Tensor) -> Result<NodeId, GraphError> {
        let zt = self.value(z);
        if zt.shape() != target.shape() || zt.shape() != weight.shape() {
            return Err(shape_err(
                "bce_mean",
                format!(
                    "logits {:?}, target {:?}, weight {:?}",
                    zt.shape(),
                    target.shape(),
                    weight.shape()
                ),
            ));
        }
        let wsum: Real = weight.data().iter().sum();
        let loss = if wsum > 0.0 {
            let mut acc = 0.0;
            for ((&zi, &yi), &wi) in zt.data().iter().zip(target.data()).zip(weight.data()) {
                if wi != 0.0 {
                    acc += wi * (zi.max(0.0) - zi * yi + (-zi.abs()).exp().ln_1p());
                }
            }
            acc / wsum
        } else {
            0.0
        };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceMean { z, target: target.data().to_vec(), weight: weight.data().to_vec(), wsum },
        ))
    }

    /// Scalar dot product of a node with fixed weights. Mostly useful to
    /// project a tensor output down to a scalar loss (gradient checks).
    pub fn weighted_sum(&mut self, x: NodeId, weights: &Tensor) -> Result<NodeId, GraphError> {
        if self.value(x).shape() != weights.shape() {
            return Err(shape_err(
                "weighted_sum",
                format!("{:?} vs {:?}", self.value(x).shape(), weights.shape()),
            ));
        }
        let dot: Real = self.value(x).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        Ok(self.push(Tensor::scalar(dot), Op::WeightedSum { x, weights: weights.data().to_vec() }))
    }

    /// Reverse pass from a scalar `loss` node. Gradients on parameter
    /// leaves accumulate into `params`; gradients on every node are kept
    /// and readable through [`Graph::grad`] until the next backward call.
    pub fn backward(&mut self, loss: NodeId, params: &mut ParameterSet) -> Result<(), GraphError> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(GraphError::NotScalar);
        }
        let mut grads: Vec<Option<Vec<Real>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(gy) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Input => {}
                Op::Param(name) => params.accumulate_grad(name, &gy),
                Op::Conv2d(ctx) => conv::conv2d_backward(&self.nodes, ctx, &gy, &mut grads),
                Op::ConvT2d(ctx) => conv::conv_t2d_backward(&self.nodes, ctx, &gy, &mut grads),
                Op::Relu { x } => {
                    let xi = x.0;
                    let dst = acc(&mut grads[xi], self.nodes[xi].value.numel());
                    for (i, &xv) in self.nodes[xi].value.data().iter().enumerate() {
                        if xv > 0.0 {
                            dst[i] += gy[i];
                        }
                    }
                }
                Op::MaxPool { x, argmax, .. } => {
                    let xi = x.0;
                    let dst = acc(&mut grads[xi], self.nodes[xi].value.numel());
                    for (o, &src) in argmax.iter().enumerate() {
                        dst[src as usize] += gy[o];
                    }
                }
                Op::Upsample { x, factor } => {
                    let xi = x.0;
                    let (n, h, w, c) = self.nodes[xi].value.nhwc().expect("recorded as NHWC");
                    let dst = acc(&mut grads[xi], self.nodes[xi].value.numel());
                    ops::upsample_backward(&gy, dst, n, h, w, c, *factor);
                }
                Op::ConcatC { a, b, ca, cb } => {
                    let (ai, bi, ca, cb) = (a.0, b.0, *ca, *cb);
                    let rows = self.nodes[ai].value.numel() / ca;
                    {
                        let da = acc(&mut grads[ai], rows * ca);
                        ops::concat_backward_half(&gy, da, rows, ca, ca + cb, 0);
                    }
                    let db = acc(&mut grads[bi], rows * cb);
                    ops::concat_backward_half(&gy, db, rows, cb, ca + cb, ca);
                }
                Op::Add { a, b } => {
                    let (ai, bi) = (a.0, b.0);
                    for idx in [ai, bi] {
                        let dst = acc(&mut grads[idx], gy.len());
                        for (d, g) in dst.iter_mut().zip(&gy) {
                            *d += *g;
                        }
                    }
                }
                Op::BatchNorm(ctx) => ops::bn_backward(&self.nodes, ctx, &gy, &mut grads),
                Op::Sigmoid { x } => {
                    let xi = x.0;
                    let y = self.nodes[id].value.data();
                    let dst = acc(&mut grads[xi], y.len());
                    for i in 0..y.len() {
                        dst[i] += gy[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::WeightedSum { x, weights } => {
                    let xi = x.0;
                    let dst = acc(&mut grads[xi], weights.len());
                    for (d, &wv) in dst.iter_mut().zip(weights) {
                        *d += gy[0] * wv;
                    }
                }
                Op::BceMean { z, target, weight, wsum } => {
                    if *wsum > 0.0 {
                        let zi = z.0;
                        let zdata = self.nodes[zi].value.data();
                        let dst = acc(&mut grads[zi], zdata.len());
                        let scale = gy[0] / *wsum;
                        for i in 0..zdata.len() {
                            if weight[i] != 0.0 {
                                dst[i] += scale * weight[i] * (stable_sigmoid(zdata[i]) - target[i]);
                            }
                        }
                    }
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Folds the batch moments saved by train-mode batch-norm nodes into
    /// the running-statistic buffers of `params`:
    /// `running = BN_MOMENTUM * running + (1 - BN_MOMENTUM) * batch`.
    /// Call once per training step, after the forward pass.
    pub fn commit_bn_stats(&self, params: &mut ParameterSet) {
        for node in &self.nodes {
            if let Op::BatchNorm(ctx) = &node.op {
                if !ctx.train {
                    continue;
                }
                let Some(key) = &ctx.stats_key else { continue };
                for (suffix, batch) in [("running_mean", &ctx.mean), ("running_var", &ctx.var)] {
                    let name = format!("{key}.{suffix}");
                    if let Some(buf) = params.value_mut(&name) {
                        for (r, &b) in buf.data_mut().iter_mut().zip(batch.iter()) {
                            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
                        }
                    }
                }
            }
        }
    }
}

/// Lazily allocates a zeroed gradient buffer for accumulation.
fn acc(slot: &mut Option<Vec<Real>>, len: usize) -> &mut Vec<Real> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

/// Numerically stable logistic function: computed as
/// `exp(z)/(1+exp(z))` for negative `z` so the exponent never overflows.
///
/// The result is clamped into the open interval (0,1): without that, float
/// rounding returns exactly 1.0 once `exp(-z)` drops below half an ulp of
/// 1.0, and exactly 0.0 once `exp(z)` underflows in the far negative tail.
#[inline]
pub fn stable_sigmoid(z: Real) -> Real {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.max(Real::MIN_POSITIVE).min(1.0 - Real::EPSILON / 2.0)
}
