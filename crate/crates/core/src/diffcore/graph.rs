//! Define-by-run tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward pass. Because inputs always exist before the node
//! that consumes them, insertion order is a topological order and the
//! backward sweep simply walks the node list in reverse.

use std::collections::BTreeMap;

use super::kernels::{col2im_add, gemm, im2col, ConvGeometry};
use super::tensor::Tensor;
use crate::error::{contract_err, shape_err, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifier of a trainable parameter block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Gradients of a scalar loss with respect to parameter blocks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientMap {
    grads: BTreeMap<ParamId, Tensor>,
}

impl GradientMap {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor) {
        self.grads.insert(id, grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Batch statistics produced by a training-mode batch normalization node.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance of the batch.
    pub var: Vec<f64>,
    /// Number of values reduced per channel.
    pub count: usize,
}

enum Op {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    AddRowVector(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    LinComb(Vec<(NodeId, f64)>),
    Relu(NodeId),
    Reshape(NodeId),
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: ConvGeometry,
        cols: Vec<f64>,
    },
    MaxPool2d {
        x: NodeId,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ChannelAffine {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MaskMul {
        x: NodeId,
        mask: Vec<f64>,
    },
    Sum(NodeId),
    SumSquares(NodeId),
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    SquaredError {
        pred: NodeId,
        target: NodeId,
    },
    RelativeReconstruction {
        f: NodeId,
        f_hat: NodeId,
        denom: Vec<f64>,
        /// Samples whose denominator sits on the `eps` floor.
        floored: Vec<bool>,
    },
    AbsSum(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    per_sample: Option<Vec<f64>>,
}

/// Operation tape; confined to one thread and rebuilt for every forward pass.
pub struct Graph {
    nodes: Vec<Node>,
    inference: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// `[batch, channels, spatial]` view of a tensor used by per-channel ops.
fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(shape_err!(
            "per-channel op needs at least [batch, channels], got {shape:?}"
        ));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            inference: false,
        }
    }

    /// A tape that skips backward caches; calling [`Graph::backward`] on it fails.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            inference: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Per-sample contributions of a loss node, when the op records them.
    pub fn per_sample(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].per_sample.as_deref()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            per_sample: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_loss(&mut self, op: Op, per_sample: Vec<f64>, requires_grad: bool) -> NodeId {
        let value = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
        let id = self.push(op, Tensor::scalar(value), requires_grad);
        self.nodes[id.0].per_sample = Some(per_sample);
        id
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Constant leaf; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value, false)
    }

    /// Differentiable leaf whose gradient is reported under `id`.
    pub fn param(&mut self, id: ParamId, value: Tensor) -> NodeId {
        self.push(Op::Param(id), value, true)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err!("matmul of {sa:?} by {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            false,
            false,
            m,
            n,
            k,
            1.0,
            self.value(a).data(),
            self.value(b).data(),
            0.0,
            &mut out,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::new(&[m, n], out)?, rg))
    }

    /// Adds vector `b` (length n) to every row of `x` (`[m, n]`).
    pub fn add_row_vector(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(shape_err!("cannot broadcast bias {sb:?} over {sx:?}"));
        }
        let n = sb[0];
        let mut out = self.value(x).clone();
        let bias = self.value(b).data();
        for row in out.data_mut().chunks_mut(n) {
            add_into(row, bias);
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Op::AddRowVector(x, b), out, rg))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        add_into(out.data_mut(), self.value(b).data());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), out, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= v;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), out, rg))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= c);
        let rg = self.rg(x);
        self.push(Op::Scale(x, c), out, rg)
    }

    /// `sum_i w_i * x_i` over same-shaped nodes.
    pub fn lin_comb(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let (first, _) = *terms
            .first()
            .ok_or_else(|| contract_err!("lin_comb needs at least one term"))?;
        let mut out = self.value(first).zeros_like();
        for &(id, w) in terms {
            self.same_shape(first, id, "lin_comb")?;
            for (o, v) in out.data_mut().iter_mut().zip(self.value(id).data()) {
                *o += w * v;
            }
        }
        let rg = terms.iter().any(|&(id, _)| self.rg(id));
        Ok(self.push(Op::LinComb(terms.to_vec()), out, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let rg = self.rg(x);
        self.push(Op::Relu(x), out, rg)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(Op::Reshape(x), out, rg))
    }

    /// Collapses everything but the leading dimension.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let shape = [v.rows(), v.row_len()];
        self.reshape(x, &shape)
    }

    /// Cross-correlation of `x: [B, C, H, W]` with `w: [O, C, KH, KW]` plus bias `b: [O]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 4 || sw.len() != 4 || sb.len() != 1 {
            return Err(shape_err!("conv2d expects 4-D input and kernel, 1-D bias; got {sx:?}, {sw:?}, {sb:?}"));
        }
        if sx[1] != sw[1] || sb[0] != sw[0] {
            return Err(shape_err!("conv2d channel mismatch: input {sx:?}, kernel {sw:?}, bias {sb:?}"));
        }
        if stride == 0 || sx[2] + 2 * pad < sw[2] || sx[3] + 2 * pad < sw[3] {
            return Err(shape_err!("conv2d kernel {sw:?} with pad {pad}, stride {stride} does not fit input {sx:?}"));
        }
        let geom = ConvGeometry {
            channels: sx[1],
            height: sx[2],
            width: sx[3],
            kernel_h: sw[2],
            kernel_w: sw[3],
            stride,
            pad,
        };
        let (batch, out_ch) = (sx[0], sw[0]);
        let (kk, p, img) = (geom.patch_len(), geom.positions(), geom.image_len());
        let keep = !self.inference && (self.rg(w) || self.rg(x));
        let mut all_cols = if keep { vec![0.0; batch * kk * p] } else { Vec::new() };
        let mut scratch = if keep { Vec::new() } else { vec![0.0; kk * p] };
        let mut out = vec![0.0; batch * out_ch * p];
        {
            let xd = self.value(x).data();
            let wd = self.value(w).data();
            let bd = self.value(b).data();
            for n in 0..batch {
                let cols = if keep {
                    &mut all_cols[n * kk * p..(n + 1) * kk * p]
                } else {
                    &mut scratch[..]
                };
                im2col(&geom, &xd[n * img..(n + 1) * img], cols);
                let dst = &mut out[n * out_ch * p..(n + 1) * out_ch * p];
                for (o, plane) in dst.chunks_mut(p).enumerate() {
                    plane.fill(bd[o]);
                }
                gemm(false, false, out_ch, p, kk, 1.0, wd, cols, 1.0, dst);
            }
        }
        let value = Tensor::new(&[batch, out_ch, geom.out_height(), geom.out_width()], out)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols: all_cols,
            },
            value,
            rg,
        ))
    }

    /// Non-overlapping `size x size` max pooling over `[B, C, H, W]`; trailing
    /// rows/columns that do not fill a window are dropped.
    pub fn max_pool2d(&mut self, x: NodeId, size: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || size == 0 || s[2] < size || s[3] < size {
            return Err(shape_err!("max_pool2d window {size} on input {s:?}"));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / size, w / size);
        let xd = self.value(x).data();
        let mut out = vec![0.0; b * c * oh * ow];
        let mut argmax = vec![0usize; out.len()];
        for plane in 0..b * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = base + y * size * w + xo * size;
                    for dy in 0..size {
                        for dx in 0..size {
                            let idx = base + (y * size + dy) * w + xo * size + dx;
                            if xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                    }
                    let o = (plane * oh + y) * ow + xo;
                    out[o] = xd[best];
                    argmax[o] = best;
                }
            }
        }
        let rg = self.rg(x);
        let value = Tensor::new(&[b, c, oh, ow], out)?;
        Ok(self.push(Op::MaxPool2d { x, argmax }, value, rg))
    }

    /// Training-mode batch normalization over dimension 1 of `x`.
    ///
    /// Returns the output node and the batch statistics so the caller can
    /// maintain running estimates.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<(NodeId, BatchStats)> {
        let (b, c, s) = channel_layout(self.shape(x))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err!("batch-norm scale/shift must have shape [{c}]"));
        }
        let count = b * s;
        if count < 2 {
            return Err(contract_err!("batch-norm statistics need at least two values per channel"));
        }
        let xd = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for n in 0..b {
            for ch in 0..c {
                let base = (n * c + ch) * s;
                mean[ch] += xd[base..base + s].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        for n in 0..b {
            for ch in 0..c {
                let base = (n * c + ch) * s;
                var[ch] += xd[base..base + s]
                    .iter()
                    .map(|v| (v - mean[ch]) * (v - mean[ch]))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for n in 0..b {
            for ch in 0..c {
                let base = (n * c + ch) * s;
                for i in base..base + s {
                    xhat[i] = (xd[i] - mean[ch]) * inv_std[ch];
                    out[i] = gd[ch] * xhat[i] + bd[ch];
                }
            }
        }
        let value = Tensor::new(self.shape(x), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let id = self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            value,
            rg,
        );
        Ok((id, BatchStats { mean, var, count }))
    }

    /// `gamma * (x - mean) / sqrt(var + eps) + beta` per channel with fixed statistics.
    pub fn channel_affine(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<NodeId> {
        let (b, c, s) = channel_layout(self.shape(x))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || mean.len() != c || var.len() != c {
            return Err(shape_err!("per-channel parameters must have length {c}"));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xd = self.value(x).data();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![0.0; xd.len()];
        for n in 0..b {
            for ch in 0..c {
                let base = (n * c + ch) * s;
                for i in base..base + s {
                    out[i] = gd[ch] * (xd[i] - mean[ch]) * inv_std[ch] + bd[ch];
                }
            }
        }
        let value = Tensor::new(self.shape(x), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Op::ChannelAffine {
                x,
                gamma,
                beta,
                mean: mean.to_vec(),
                inv_std,
            },
            value,
            rg,
        ))
    }

    /// Elementwise product with a constant mask (used for dropout).
    pub fn mask_mul(&mut self, x: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        if mask.len() != self.value(x).len() {
            return Err(shape_err!(
                "mask of length {} for tensor of {} values",
                mask.len(),
                self.value(x).len()
            ));
        }
        let mut out = self.value(x).clone();
        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        let rg = self.rg(x);
        Ok(self.push(Op::MaskMul { x, mask }, out, rg))
    }

    /// Sum of all elements as a scalar node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).data().iter().sum::<f64>();
        let rg = self.rg(x);
        self.push(Op::Sum(x), Tensor::scalar(v), rg)
    }

    /// Sum of squared elements as a scalar node.
    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).data().iter().map(|v| v * v).sum::<f64>();
        let rg = self.rg(x);
        self.push(Op::SumSquares(x), Tensor::scalar(v), rg)
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(shape_err!(
                "logits {s:?} do not match {} labels",
                labels.len()
            ));
        }
        let classes = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(contract_err!("label {bad} outside [0, {classes})"));
        }
        let ld = self.value(logits).data();
        let mut probs = vec![0.0; ld.len()];
        let mut per_sample = Vec::with_capacity(labels.len());
        for (n, &label) in labels.iter().enumerate() {
            let row = &ld[n * classes..(n + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + sum_exp.ln();
            for (p, v) in probs[n * classes..(n + 1) * classes].iter_mut().zip(row) {
                *p = (v - log_z).exp();
            }
            per_sample.push(log_z - row[label]);
        }
        let rg = self.rg(logits);
        Ok(self.push_loss(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            per_sample,
            rg,
        ))
    }

    /// Mean over the batch of the per-sample squared Euclidean distance.
    pub fn squared_error(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.same_shape(pred, target, "squared_error")?;
        let (p, t) = (self.value(pred), self.value(target));
        let per_sample: Vec<f64> = (0..p.rows())
            .map(|n| {
                p.row(n)
                    .iter()
                    .zip(t.row(n))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum()
            })
            .collect();
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push_loss(Op::SquaredError { pred, target }, per_sample, rg))
    }

    /// Mean over the batch of `||f - f_hat||^2 / max(||f||^2, eps)`.
    ///
    /// The floor only matters for (near-)zero feature rows; above it the loss
    /// is exactly invariant to rescaling `f` and `f_hat` together.
    pub fn relative_reconstruction(&mut self, f: NodeId, f_hat: NodeId, eps: f64) -> Result<NodeId> {
        self.same_shape(f, f_hat, "relative_reconstruction")?;
        let (fv, hv) = (self.value(f), self.value(f_hat));
        let rows = fv.rows();
        let mut denom = Vec::with_capacity(rows);
        let mut per_sample = Vec::with_capacity(rows);
        let mut floored = Vec::with_capacity(rows);
        for n in 0..rows {
            let (fr, hr) = (fv.row(n), hv.row(n));
            let norm: f64 = fr.iter().map(|v| v * v).sum();
            let err: f64 = fr.iter().zip(hr).map(|(a, b)| (a - b) * (a - b)).sum();
            let d = norm.max(eps);
            denom.push(d);
            floored.push(norm < eps);
            per_sample.push(err / d);
        }
        let rg = self.rg(f) || self.rg(f_hat);
        Ok(self.push_loss(Op::RelativeReconstruction { f, f_hat, denom, floored }, per_sample, rg))
    }

    /// Mean over the batch of the per-sample sum of absolute values.
    pub fn abs_sum(&mut self, z: NodeId) -> NodeId {
        let v = self.value(z);
        let per_sample: Vec<f64> = (0..v.rows())
            .map(|n| v.row(n).iter().map(|x| x.abs()).sum())
            .collect();
        let rg = self.rg(z);
        self.push_loss(Op::AbsSum(z), per_sample, rg)
    }

    /// Reverse sweep from a scalar node.
    ///
    /// Every [`Graph::param`] leaf receives an entry, zero-filled when it does
    /// not influence the loss.
    pub fn backward(&self, loss: NodeId) -> Result<GradientMap> {
        if self.inference {
            return Err(contract_err!("backward called on an inference-only graph"));
        }
        if self.value(loss).len() != 1 {
            return Err(contract_err!(
                "backward needs a scalar loss node, got shape {:?}",
                self.shape(loss)
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = GradientMap::default();
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if let Op::Param(pid) = node.op {
                let g = grads[i].take().unwrap_or_else(|| vec![0.0; node.value.len()]);
                let t = Tensor::new(node.value.shape(), g)?;
                match out.grads.get_mut(&pid) {
                    Some(existing) => add_into(existing.data_mut(), t.data()),
                    None => {
                        out.grads.insert(pid, t);
                    }
                }
                continue;
            }
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        for node in &self.nodes[loss.0 + 1..] {
            if let Op::Param(pid) = node.op {
                out.grads
                    .entry(pid)
                    .or_insert_with(|| node.value.zeros_like());
            }
        }
        Ok(out)
    }

    fn buf<'a>(&self, grads: &'a mut [Option<Vec<f64>>], id: NodeId) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[id.0].requires_grad {
            return None;
        }
        let len = self.nodes[id.0].value.len();
        Some(grads[id.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if let Some(da) = self.buf(grads, *a) {
                    gemm(false, true, m, k, n, 1.0, g, self.value(*b).data(), 1.0, da);
                }
                if let Some(db) = self.buf(grads, *b) {
                    gemm(true, false, k, n, m, 1.0, self.value(*a).data(), g, 1.0, db);
                }
            }
            Op::AddRowVector(x, b) => {
                if let Some(dx) = self.buf(grads, *x) {
                    add_into(dx, g);
                }
                let n = self.shape(*b)[0];
                if let Some(db) = self.buf(grads, *b) {
                    for row in g.chunks(n) {
                        add_into(db, row);
                    }
                }
            }
            Op::Add(a, b) => {
                for id in [a, b] {
                    if let Some(d) = self.buf(grads, *id) {
                        add_into(d, g);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (id, other) in [(a, b), (b, a)] {
                    let ov = self.value(*other).data();
                    if let Some(d) = self.buf(grads, *id) {
                        for ((d, gi), o) in d.iter_mut().zip(g).zip(ov) {
                            *d += gi * o;
                        }
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(d) = self.buf(grads, *x) {
                    for (d, gi) in d.iter_mut().zip(g) {
                        *d += c * gi;
                    }
                }
            }
            Op::LinComb(terms) => {
                for (id, w) in terms {
                    if let Some(d) = self.buf(grads, *id) {
                        for (d, gi) in d.iter_mut().zip(g) {
                            *d += w * gi;
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let out = node.value.data();
                if let Some(d) = self.buf(grads, *x) {
                    for ((d, gi), o) in d.iter_mut().zip(g).zip(out) {
                        if *o > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(d) = self.buf(grads, *x) {
                    add_into(d, g);
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            } => self.backprop_conv(*x, *w, *b, geom, cols, g, grads),
            Op::MaxPool2d { x, argmax } => {
                if let Some(d) = self.buf(grads, *x) {
                    for (gi, &src) in g.iter().zip(argmax) {
                        d[src] += gi;
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (b, c, s) = channel_layout(node.value.shape()).expect("validated in forward");
                let count = (b * s) as f64;
                let gd = self.value(*gamma).data();
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for n in 0..b {
                    for ch in 0..c {
                        let base = (n * c + ch) * s;
                        for i in base..base + s {
                            sum_g[ch] += g[i];
                            sum_gx[ch] += g[i] * xhat[i];
                        }
                    }
                }
                if let Some(dg) = self.buf(grads, *gamma) {
                    add_into(dg, &sum_gx);
                }
                if let Some(db) = self.buf(grads, *beta) {
                    add_into(db, &sum_g);
                }
                if let Some(dx) = self.buf(grads, *x) {
                    for n in 0..b {
                        for ch in 0..c {
                            let base = (n * c + ch) * s;
                            let k = gd[ch] * inv_std[ch] / count;
                            for i in base..base + s {
                                dx[i] += k * (count * g[i] - sum_g[ch] - xhat[i] * sum_gx[ch]);
                            }
                        }
                    }
                }
            }
            Op::ChannelAffine {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let (b, c, s) = channel_layout(node.value.shape()).expect("validated in forward");
                let xd = self.value(*x).data();
                let gd = self.value(*gamma).data();
                if let Some(dx) = self.buf(grads, *x) {
                    for n in 0..b {
                        for ch in 0..c {
                            let base = (n * c + ch) * s;
                            for i in base..base + s {
                                dx[i] += g[i] * gd[ch] * inv_std[ch];
                            }
                        }
                    }
                }
                if let Some(dg) = self.buf(grads, *gamma) {
                    for n in 0..b {
                        for ch in 0..c {
                            let base = (n * c + ch) * s;
                            for i in base..base + s {
                                dg[ch] += g[i] * (xd[i] - mean[ch]) * inv_std[ch];
                            }
                        }
                    }
                }
                if let Some(db) = self.buf(grads, *beta) {
                    for n in 0..b {
                        for ch in 0..c {
                            let base = (n * c + ch) * s;
                            db[ch] += g[base..base + s].iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::MaskMul { x, mask } => {
                if let Some(d) = self.buf(grads, *x) {
                    for ((d, gi), m) in d.iter_mut().zip(g).zip(mask) {
                        *d += gi * m;
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(d) = self.buf(grads, *x) {
                    d.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::SumSquares(x) => {
                let xv = self.value(*x).data();
                if let Some(d) = self.buf(grads, *x) {
                    for (d, v) in d.iter_mut().zip(xv) {
                        *d += 2.0 * v * g[0];
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let batch = labels.len();
                let classes = probs.len() / batch;
                let k = g[0] / batch as f64;
                if let Some(d) = self.buf(grads, *logits) {
                    for (n, &label) in labels.iter().enumerate() {
                        for j in 0..classes {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            d[n * classes + j] += k * (probs[n * classes + j] - onehot);
                        }
                    }
                }
            }
            Op::SquaredError { pred, target } => {
                let batch = self.value(*pred).rows() as f64;
                let k = 2.0 * g[0] / batch;
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                for (id, sign) in [(pred, 1.0), (target, -1.0)] {
                    if let Some(d) = self.buf(grads, *id) {
                        for ((d, a), b) in d.iter_mut().zip(p).zip(t) {
                            *d += sign * k * (a - b);
                        }
                    }
                }
            }
            Op::RelativeReconstruction { f, f_hat, denom, floored } => {
                let fv = self.value(*f);
                let (fd, hd) = (fv.data(), self.value(*f_hat).data());
                let (rows, width) = (fv.rows(), fv.row_len());
                let k = 2.0 * g[0] / rows as f64;
                let per_sample = node.per_sample.as_deref().expect("loss nodes record samples");
                if let Some(d) = self.buf(grads, *f_hat) {
                    for n in 0..rows {
                        for j in n * width..(n + 1) * width {
                            d[j] -= k * (fd[j] - hd[j]) / denom[n];
                        }
                    }
                }
                if let Some(d) = self.buf(grads, *f) {
                    for n in 0..rows {
                        // d/df of err/den = 2(f - f_hat)/den - 2 f * (err/den)/den;
                        // a floored denominator is constant.
                        let ratio = if floored[n] { 0.0 } else { per_sample[n] };
                        for j in n * width..(n + 1) * width {
                            d[j] += k * ((fd[j] - hd[j]) - fd[j] * ratio) / denom[n];
                        }
                    }
                }
            }
            Op::AbsSum(z) => {
                let zv = self.value(*z);
                let k = g[0] / zv.rows() as f64;
                let zd = zv.data();
                if let Some(d) = self.buf(grads, *z) {
                    for (d, v) in d.iter_mut().zip(zd) {
                        if *v > 0.0 {
                            *d += k;
                        } else if *v < 0.0 {
                            *d -= k;
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_conv(
        &self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: &ConvGeometry,
        cols: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let batch = self.shape(x)[0];
        let out_ch = self.shape(w)[0];
        let (kk, p, img) = (geom.patch_len(), geom.positions(), geom.image_len());
        if let Some(db) = self.buf(grads, b) {
            for n in 0..batch {
                for (o, plane) in g[n * out_ch * p..(n + 1) * out_ch * p].chunks(p).enumerate() {
                    db[o] += plane.iter().sum::<f64>();
                }
            }
        }
        if let Some(dw) = self.buf(grads, w) {
            for n in 0..batch {
                let gn = &g[n * out_ch * p..(n + 1) * out_ch * p];
                let cn = &cols[n * kk * p..(n + 1) * kk * p];
                gemm(false, true, out_ch, kk, p, 1.0, gn, cn, 1.0, dw);
            }
        }
        let wd = self.value(w).data();
        if let Some(dx) = self.buf(grads, x) {
            let mut dcols = vec![0.0; kk * p];
            for n in 0..batch {
                let gn = &g[n * out_ch * p..(n + 1) * out_ch * p];
                gemm(true, false, kk, p, out_ch, 1.0, wd, gn, 0.0, &mut dcols);
                col2im_add(geom, &dcols, &mut dx[n * img..(n + 1) * img]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let i = g.input(t(&[2, 2], &[1., 0., 0., 1.]));
        let m = g.input(t(&[2, 2], &[1., 2., 3., 4.]));
        let c = g.matmul(i, m).unwrap();
        assert_eq!(g.value(c).data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn matmul_dot_product() {
        let mut g = Graph::new();
        let a = g.input(t(&[1, 2], &[1., 2.]));
        let b = g.input(t(&[2, 1], &[3., 4.]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.]);
    }

    #[test]
    fn matmul_inner_mismatch() {
        let mut g = Graph::new();
        let a = g.input(t(&[2, 3], &[0.; 6]));
        let b = g.input(t(&[2, 3], &[0.; 6]));
        assert!(matches!(g.matmul(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn identity_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.param(ParamId(0), t(&[2, 3], &[0.5, -1., 2., 3., 0., 1.]));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(ParamId(0)).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn square_sum_gradient() {
        let mut g = Graph::new();
        let x = g.param(ParamId(0), t(&[3], &[1., -2., 3.]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(ParamId(0)).unwrap().data(), &[2., -4., 6.]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(ParamId(0), t(&[2], &[1., 2.]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_params_get_zero_gradients() {
        let mut g = Graph::new();
        let a = g.param(ParamId(0), t(&[2], &[1., 2.]));
        let _b = g.param(ParamId(1), t(&[3], &[1., 2., 3.]));
        let s = g.sum(a);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(ParamId(1)).unwrap().data(), &[0.; 3]);
        assert_eq!(grads.len(), 2);
    }

    #[test]
    fn inference_graph_refuses_backward() {
        let mut g = Graph::inference();
        let a = g.param(ParamId(0), t(&[1], &[1.]));
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut g = Graph::new();
        let l = g.input(t(&[1, 3], &[0., 0., 0.]));
        assert!(matches!(
            g.softmax_cross_entropy(l, &[3]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn batch_norm_needs_two_values() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 2], &[1., 2.]));
        let ga = g.input(t(&[2], &[1., 1.]));
        let be = g.input(t(&[2], &[0., 0.]));
        assert!(matches!(g.batch_norm(x, ga, be, 1e-5), Err(Error::Contract(_))));
    }
}
