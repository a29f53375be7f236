//! Define-by-run tape with reverse-mode gradients.
//!
//! Ops compute eagerly on insertion; `backward` walks the tape in reverse,
//! accumulating gradients into every node (multi-use inputs sum their
//! contributions). Parents always precede children, so reverse insertion
//! order is a valid topological order.

use super::kernels::{col2im, conv_out_dim, im2col, mm_nn, mm_nt, mm_tn};
use super::Scalar;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

struct Node<F: Scalar> {
    shape: Vec<usize>,
    data: Vec<F>,
    grad: Vec<F>,
    op: Op<F>,
}

enum Op<F: Scalar> {
    Leaf,
    Relu { x: VarId },
    Sigmoid { x: VarId },
    Tanh { x: VarId },
    Abs { x: VarId },
    Sqrt { x: VarId },
    ClampMin { x: VarId, min: F },
    Add { a: VarId, b: VarId },
    Sub { a: VarId, b: VarId },
    Mul { a: VarId, b: VarId },
    ScalarMul { x: VarId, c: F },
    AddAtLabels { x: VarId },
    SumAll { x: VarId },
    Linear { x: VarId, w: VarId, b: VarId },
    MatmulNt { a: VarId, b: VarId },
    RowNormalize { x: VarId, norms: Vec<F> },
    Conv2d { x: VarId, k: VarId, stride: usize, pad: usize },
    BatchNorm { x: VarId, gamma: VarId, beta: VarId, x_hat: Vec<F>, inv_std: Vec<F>, train: bool },
    GlobalAvgPool { x: VarId },
    SoftThreshold { x: VarId, tau: VarId },
    FlattenFrames { x: VarId },
    SoftmaxRows { x: VarId },
    WeightedSum { frames: VarId, weights: VarId },
    ConcatCols { a: VarId, b: VarId },
    Reshape { x: VarId },
    CrossEntropyMean { logits: VarId, labels: Vec<usize>, probs: Vec<F> },
}

/// Per-channel layout of a batch-normalizable tensor: `n x c` or
/// `n x c x h x w`, reduced over everything but the channel axis.
fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape.len() {
        2 => Ok((shape[0], shape[1], 1)),
        4 => Ok((shape[0], shape[1], shape[2] * shape[3])),
        _ => Err(Error::Shape(format!(
            "expected a 2-d or 4-d tensor, got {shape:?}"
        ))),
    }
}

pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<F>, op: Op<F>) -> VarId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node { shape, data, grad: Vec::new(), op });
        VarId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: VarId) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn data(&self, v: VarId) -> &[F] {
        &self.nodes[v.0].data
    }

    /// Gradient of the last `backward` target with respect to `v`.
    /// Empty until `backward` has run.
    pub fn grad(&self, v: VarId) -> &[F] {
        &self.nodes[v.0].grad
    }

    pub fn scalar(&self, v: VarId) -> F {
        debug_assert_eq!(self.nodes[v.0].data.len(), 1);
        self.nodes[v.0].data[0]
    }

    pub fn leaf(&mut self, shape: &[usize], data: Vec<F>) -> Result<VarId> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "leaf shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf))
    }

    // ---- elementwise ----

    pub fn relu(&mut self, x: VarId) -> VarId {
        let data = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| if v > F::zero() { v } else { F::zero() })
            .collect();
        self.push(self.nodes[x.0].shape.clone(), data, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: VarId) -> VarId {
        let data = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| {
                // stable form on both tails
                if v >= F::zero() {
                    F::one() / (F::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (F::one() + e)
                }
            })
            .collect();
        self.push(self.nodes[x.0].shape.clone(), data, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: VarId) -> VarId {
        let data = self.nodes[x.0].data.iter().map(|&v| v.tanh()).collect();
        self.push(self.nodes[x.0].shape.clone(), data, Op::Tanh { x })
    }

    pub fn abs(&mut self, x: VarId) -> VarId {
        let data = self.nodes[x.0].data.iter().map(|&v| v.abs()).collect();
        self.push(self.nodes[x.0].shape.clone(), data, Op::Abs { x })
    }

    pub fn sqrt(&mut self, x: VarId) -> VarId {
        let data = self.nodes[x.0].data.iter().map(|&v| v.sqrt()).collect();
        self.push(self.nodes[x.0].shape.clone(), data, Op::Sqrt { x })
    }

    pub fn clamp_min(&mut self, x: VarId, min: F) -> VarId {
        let data = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| if v > min { v } else { min })
            .collect();
        self.push(self.nodes[x.0].shape.clone(), data, Op::ClampMin { x, min })
    }

    fn binary(&mut self, a: VarId, b: VarId, name: &str) -> Result<Vec<usize>> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::Shape(format!(
                "{name}: {:?} vs {:?}",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        Ok(self.nodes[a.0].shape.clone())
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let shape = self.binary(a, b, "add")?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(self.nodes[b.0].data.iter())
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(shape, data, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let shape = self.binary(a, b, "sub")?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(self.nodes[b.0].data.iter())
            .map(|(&x, &y)| x - y)
            .collect();
        Ok(self.push(shape, data, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let shape = self.binary(a, b, "mul")?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(self.nodes[b.0].data.iter())
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(shape, data, Op::Mul { a, b }))
    }

    pub fn scalar_mul(&mut self, x: VarId, c: F) -> VarId {
        let data = self.nodes[x.0].data.iter().map(|&v| v * c).collect();
        self.push(self.nodes[x.0].shape.clone(), data, Op::ScalarMul { x, c })
    }

    /// Add `delta` at position `(i, labels[i])` of an `n x c` tensor.
    pub fn add_at_labels(&mut self, x: VarId, labels: &[usize], delta: F) -> Result<VarId> {
        let shape = self.nodes[x.0].shape.clone();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::Shape(format!(
                "add_at_labels: shape {shape:?} vs {} labels",
                labels.len()
            )));
        }
        let c = shape[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Argument(format!("label {bad} out of range [0, {c})")));
        }
        let mut data = self.nodes[x.0].data.clone();
        for (i, &l) in labels.iter().enumerate() {
            data[i * c + l] += delta;
        }
        Ok(self.push(shape, data, Op::AddAtLabels { x }))
    }

    pub fn sum_all(&mut self, x: VarId) -> VarId {
        let mut acc = F::zero();
        for &v in &self.nodes[x.0].data {
            acc += v;
        }
        self.push(vec![1], vec![acc], Op::SumAll { x })
    }

    // ---- linear algebra ----

    /// Affine map: `x: r x d`, `w: k x d`, `b: k` -> `r x k`.
    pub fn linear(&mut self, x: VarId, w: VarId, b: VarId) -> Result<VarId> {
        let (xs, ws, bs) = (
            self.nodes[x.0].shape.clone(),
            self.nodes[w.0].shape.clone(),
            self.nodes[b.0].shape.clone(),
        );
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bs != vec![ws[0]] {
            return Err(Error::Shape(format!(
                "linear: input {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        let (r, d, k) = (xs[0], xs[1], ws[0]);
        let mut data = vec![F::zero(); r * k];
        mm_nt(&self.nodes[x.0].data, &self.nodes[w.0].data, r, d, k, &mut data);
        for row in data.chunks_exact_mut(k) {
            for (o, &bv) in row.iter_mut().zip(self.nodes[b.0].data.iter()) {
                *o += bv;
            }
        }
        Ok(self.push(vec![r, k], data, Op::Linear { x, w, b }))
    }

    /// `a: n x d` times `b: c x d` transposed -> `n x c`.
    pub fn matmul_nt(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (as_, bs) = (self.nodes[a.0].shape.clone(), self.nodes[b.0].shape.clone());
        if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[1] {
            return Err(Error::Shape(format!("matmul_nt: {as_:?} vs {bs:?}")));
        }
        let (n, d, c) = (as_[0], as_[1], bs[0]);
        let mut data = vec![F::zero(); n * c];
        mm_nt(&self.nodes[a.0].data, &self.nodes[b.0].data, n, d, c, &mut data);
        Ok(self.push(vec![n, c], data, Op::MatmulNt { a, b }))
    }

    /// L2-normalize each row of an `r x d` tensor. Zero-norm rows are a
    /// numeric error.
    pub fn row_normalize(&mut self, x: VarId) -> Result<VarId> {
        let shape = self.nodes[x.0].shape.clone();
        if shape.len() != 2 {
            return Err(Error::Shape(format!("row_normalize: expected 2-d, got {shape:?}")));
        }
        let (r, d) = (shape[0], shape[1]);
        let mut norms = Vec::with_capacity(r);
        let mut data = Vec::with_capacity(r * d);
        for i in 0..r {
            let row = &self.nodes[x.0].data[i * d..(i + 1) * d];
            let mut sq = F::zero();
            for &v in row {
                sq += v * v;
            }
            let norm = sq.sqrt();
            if norm == F::zero() {
                return Err(Error::Numeric(format!("zero-norm row {i} in row_normalize")));
            }
            norms.push(norm);
            data.extend(row.iter().map(|&v| v / norm));
        }
        Ok(self.push(shape, data, Op::RowNormalize { x, norms }))
    }

    // ---- structured ops ----

    /// Cross-correlation convolution, no bias. `x: n x c x h x w`,
    /// `k: o x c x kh x kw`.
    pub fn conv2d(&mut self, x: VarId, k: VarId, stride: usize, pad: usize) -> Result<VarId> {
        let (xs, ks) = (self.nodes[x.0].shape.clone(), self.nodes[k.0].shape.clone());
        if xs.len() != 4 || ks.len() != 4 {
            return Err(Error::Shape(format!("conv2d: input {xs:?}, kernel {ks:?}")));
        }
        if xs[1] != ks[1] {
            return Err(Error::Shape(format!(
                "conv2d channel mismatch: input {xs:?} vs kernel {ks:?}"
            )));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, kh, kw) = (ks[0], ks[2], ks[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::Argument(format!(
                "conv2d: spatial dims {h}x{w} (pad {pad}) smaller than kernel {kh}x{kw}"
            )));
        }
        if stride == 0 {
            return Err(Error::Argument("conv2d: stride must be positive".into()));
        }
        let ho = conv_out_dim(h, kh, stride, pad);
        let wo = conv_out_dim(w, kw, stride, pad);
        let cols = n * ho * wo;
        let ckk = c * kh * kw;
        let col = im2col(&self.nodes[x.0].data, n, c, h, w, kh, kw, stride, pad);
        let mut out_mat = vec![F::zero(); o * cols];
        mm_nn(&self.nodes[k.0].data, &col, o, ckk, cols, &mut out_mat);
        // o x (n*ho*wo) -> n x o x ho x wo
        let mut data = vec![F::zero(); n * o * ho * wo];
        for oi in 0..o {
            let src = &out_mat[oi * cols..(oi + 1) * cols];
            for ni in 0..n {
                let dst = &mut data[((ni * o + oi) * ho * wo)..][..ho * wo];
                dst.copy_from_slice(&src[ni * ho * wo..(ni + 1) * ho * wo]);
            }
        }
        Ok(self.push(vec![n, o, ho, wo], data, Op::Conv2d { x, k, stride, pad }))
    }

    /// Batch-normalize with batch statistics (training mode). Returns the
    /// output node plus the per-channel batch mean and unbiased variance
    /// for running-statistics updates.
    pub fn batch_norm_train(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        eps: F,
    ) -> Result<(VarId, Vec<F>, Vec<F>)> {
        let shape = self.nodes[x.0].shape.clone();
        let (n, c, spatial) = channel_layout(&shape)?;
        let m = n * spatial;
        if m < 2 {
            return Err(Error::Degenerate(format!(
                "batch norm needs at least 2 elements per channel in training mode, got {m}"
            )));
        }
        self.check_bn_params(c, gamma, beta)?;
        let count = F::from_f64(m as f64);
        let mut mean = vec![F::zero(); c];
        let mut var = vec![F::zero(); c];
        for ni in 0..n {
            for ci in 0..c {
                let chunk = &self.nodes[x.0].data[(ni * c + ci) * spatial..][..spatial];
                let mut acc = F::zero();
                for &v in chunk {
                    acc += v;
                }
                mean[ci] += acc;
            }
        }
        for mv in mean.iter_mut() {
            *mv /= count;
        }
        for ni in 0..n {
            for ci in 0..c {
                let chunk = &self.nodes[x.0].data[(ni * c + ci) * spatial..][..spatial];
                let mu = mean[ci];
                let mut acc = F::zero();
                for &v in chunk {
                    let d = v - mu;
                    acc += d * d;
                }
                var[ci] += acc;
            }
        }
        for vv in var.iter_mut() {
            *vv /= count;
        }
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let mut x_hat = vec![F::zero(); self.nodes[x.0].data.len()];
        let mut data = vec![F::zero(); x_hat.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * spatial;
                let mu = mean[ci];
                let inv = inv_std[ci];
                let ga = self.nodes[gamma.0].data[ci];
                let be = self.nodes[beta.0].data[ci];
                for s in 0..spatial {
                    let xh = (self.nodes[x.0].data[base + s] - mu) * inv;
                    x_hat[base + s] = xh;
                    data[base + s] = ga * xh + be;
                }
            }
        }
        // unbiased variance for the running estimate
        let unbias = F::from_f64(m as f64 / (m as f64 - 1.0));
        let var_unbiased: Vec<F> = var.iter().map(|&v| v * unbias).collect();
        let node = self.push(
            shape,
            data,
            Op::BatchNorm { x, gamma, beta, x_hat, inv_std, train: true },
        );
        Ok((node, mean, var_unbiased))
    }

    /// Batch-normalize with fixed running statistics (eval mode).
    pub fn batch_norm_eval(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        running_mean: &[F],
        running_var: &[F],
        eps: F,
    ) -> Result<VarId> {
        let shape = self.nodes[x.0].shape.clone();
        let (n, c, spatial) = channel_layout(&shape)?;
        self.check_bn_params(c, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::Shape(format!(
                "batch norm running stats ({}, {}) vs {c} channels",
                running_mean.len(),
                running_var.len()
            )));
        }
        let inv_std: Vec<F> = running_var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let mut x_hat = vec![F::zero(); self.nodes[x.0].data.len()];
        let mut data = vec![F::zero(); x_hat.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * spatial;
                let mu = running_mean[ci];
                let inv = inv_std[ci];
                let ga = self.nodes[gamma.0].data[ci];
                let be = self.nodes[beta.0].data[ci];
                for s in 0..spatial {
                    let xh = (self.nodes[x.0].data[base + s] - mu) * inv;
                    x_hat[base + s] = xh;
                    data[base + s] = ga * xh + be;
                }
            }
        }
        Ok(self.push(
            shape,
            data,
            Op::BatchNorm { x, gamma, beta, x_hat, inv_std, train: false },
        ))
    }

    fn check_bn_params(&self, c: usize, gamma: VarId, beta: VarId) -> Result<()> {
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.nodes[v.0].shape != vec![c] {
                return Err(Error::Shape(format!(
                    "batch norm {name} {:?} vs {c} channels",
                    self.nodes[v.0].shape
                )));
            }
        }
        Ok(())
    }

    /// Mean over the spatial axes: `n x c x h x w` -> `n x c`.
    pub fn global_avg_pool(&mut self, x: VarId) -> Result<VarId> {
        let shape = self.nodes[x.0].shape.clone();
        if shape.len() != 4 {
            return Err(Error::Shape(format!("global_avg_pool: expected 4-d, got {shape:?}")));
        }
        let (n, c, spatial) = (shape[0], shape[1], shape[2] * shape[3]);
        let count = F::from_f64(spatial as f64);
        let mut data = Vec::with_capacity(n * c);
        for nc in 0..n * c {
            let chunk = &self.nodes[x.0].data[nc * spatial..(nc + 1) * spatial];
            let mut acc = F::zero();
            for &v in chunk {
                acc += v;
            }
            data.push(acc / count);
        }
        Ok(self.push(vec![n, c], data, Op::GlobalAvgPool { x }))
    }

    /// Soft thresholding with per-channel thresholds `tau: n x c`
    /// broadcast over space: `x - tau` above `tau`, `x + tau` below
    /// `-tau`, zero inside the dead zone.
    pub fn soft_threshold(&mut self, x: VarId, tau: VarId) -> Result<VarId> {
        let shape = self.nodes[x.0].shape.clone();
        if shape.len() != 4 {
            return Err(Error::Shape(format!("soft_threshold: expected 4-d, got {shape:?}")));
        }
        let (n, c, spatial) = (shape[0], shape[1], shape[2] * shape[3]);
        if self.nodes[tau.0].shape != vec![n, c] {
            return Err(Error::Shape(format!(
                "soft_threshold: thresholds {:?} vs input {shape:?}",
                self.nodes[tau.0].shape
            )));
        }
        if self.nodes[tau.0].data.iter().any(|&t| t < F::zero()) {
            return Err(Error::Argument("soft_threshold: negative threshold".into()));
        }
        let mut data = vec![F::zero(); self.nodes[x.0].data.len()];
        for nc in 0..n * c {
            let t = self.nodes[tau.0].data[nc];
            let src = &self.nodes[x.0].data[nc * spatial..(nc + 1) * spatial];
            let dst = &mut data[nc * spatial..(nc + 1) * spatial];
            for (d, &v) in dst.iter_mut().zip(src.iter()) {
                *d = if v > t {
                    v - t
                } else if v < -t {
                    v + t
                } else {
                    F::zero()
                };
            }
        }
        Ok(self.push(shape, data, Op::SoftThreshold { x, tau }))
    }

    /// `n x c x t x w` -> `n x t x (c*w)`: one flattened (channel, band)
    /// vector per time step.
    pub fn flatten_frames(&mut self, x: VarId) -> Result<VarId> {
        let shape = self.nodes[x.0].shape.clone();
        if shape.len() != 4 {
            return Err(Error::Shape(format!("flatten_frames: expected 4-d, got {shape:?}")));
        }
        let (n, c, t, w) = (shape[0], shape[1], shape[2], shape[3]);
        let mut data = vec![F::zero(); n * t * c * w];
        for ni in 0..n {
            for ci in 0..c {
                for ti in 0..t {
                    let src = &self.nodes[x.0].data[((ni * c + ci) * t + ti) * w..][..w];
                    let dst = &mut data[((ni * t + ti) * c + ci) * w..][..w];
                    dst.copy_from_slice(src);
                }
            }
        }
        Ok(self.push(vec![n, t, c * w], data, Op::FlattenFrames { x }))
    }

    /// Row-wise softmax over an `n x t` tensor.
    pub fn softmax_rows(&mut self, x: VarId) -> Result<VarId> {
        let shape = self.nodes[x.0].shape.clone();
        if shape.len() != 2 {
            return Err(Error::Shape(format!("softmax_rows: expected 2-d, got {shape:?}")));
        }
        let (n, t) = (shape[0], shape[1]);
        let mut data = vec![F::zero(); n * t];
        for i in 0..n {
            let row = &self.nodes[x.0].data[i * t..(i + 1) * t];
            let mut maxv = row[0];
            for &v in row {
                if v > maxv {
                    maxv = v;
                }
            }
            let out = &mut data[i * t..(i + 1) * t];
            let mut sum = F::zero();
            for (o, &v) in out.iter_mut().zip(row.iter()) {
                *o = (v - maxv).exp();
                sum += *o;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
        Ok(self.push(shape, data, Op::SoftmaxRows { x }))
    }

    /// Attention-weighted sum over frames: `frames: n x t x d`,
    /// `weights: n x t` -> `n x d`.
    pub fn weighted_sum(&mut self, frames: VarId, weights: VarId) -> Result<VarId> {
        let fs = self.nodes[frames.0].shape.clone();
        let ws = self.nodes[weights.0].shape.clone();
        if fs.len() != 3 || ws != vec![fs[0], fs[1]] {
            return Err(Error::Shape(format!("weighted_sum: frames {fs:?}, weights {ws:?}")));
        }
        let (n, t, d) = (fs[0], fs[1], fs[2]);
        let mut data = vec![F::zero(); n * d];
        for ni in 0..n {
            let out = &mut data[ni * d..(ni + 1) * d];
            for ti in 0..t {
                let a = self.nodes[weights.0].data[ni * t + ti];
                let row = &self.nodes[frames.0].data[(ni * t + ti) * d..][..d];
                for (o, &v) in out.iter_mut().zip(row.iter()) {
                    *o += a * v;
                }
            }
        }
        Ok(self.push(vec![n, d], data, Op::WeightedSum { frames, weights }))
    }

    /// Concatenate two 2-d tensors along the column axis.
    pub fn concat_cols(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (as_, bs) = (self.nodes[a.0].shape.clone(), self.nodes[b.0].shape.clone());
        if as_.len() != 2 || bs.len() != 2 || as_[0] != bs[0] {
            return Err(Error::Shape(format!("concat_cols: {as_:?} vs {bs:?}")));
        }
        let (n, da, db) = (as_[0], as_[1], bs[1]);
        let mut data = Vec::with_capacity(n * (da + db));
        for i in 0..n {
            data.extend_from_slice(&self.nodes[a.0].data[i * da..(i + 1) * da]);
            data.extend_from_slice(&self.nodes[b.0].data[i * db..(i + 1) * db]);
        }
        Ok(self.push(vec![n, da + db], data, Op::ConcatCols { a, b }))
    }

    pub fn reshape(&mut self, x: VarId, shape: &[usize]) -> Result<VarId> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x.0].data.len() {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {shape:?}",
                self.nodes[x.0].shape
            )));
        }
        let data = self.nodes[x.0].data.clone();
        Ok(self.push(shape.to_vec(), data, Op::Reshape { x }))
    }

    /// Mean cross-entropy over rows of `logits: n x c` against integer
    /// labels, computed via a stable log-sum-exp.
    pub fn cross_entropy_mean(&mut self, logits: VarId, labels: &[usize]) -> Result<VarId> {
        let shape = self.nodes[logits.0].shape.clone();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::Shape(format!(
                "cross_entropy_mean: logits {shape:?} vs {} labels",
                labels.len()
            )));
        }
        let (n, c) = (shape[0], shape[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Argument(format!("label {bad} out of range [0, {c})")));
        }
        let mut probs = vec![F::zero(); n * c];
        let mut loss = F::zero();
        for i in 0..n {
            let row = &self.nodes[logits.0].data[i * c..(i + 1) * c];
            let mut maxv = row[0];
            for &v in row {
                if v > maxv {
                    maxv = v;
                }
            }
            let mut sum = F::zero();
            for &v in row {
                sum += (v - maxv).exp();
            }
            let lse = maxv + sum.ln();
            loss += lse - row[labels[i]];
            for (p, &v) in probs[i * c..(i + 1) * c].iter_mut().zip(row.iter()) {
                *p = (v - lse).exp();
            }
        }
        loss /= F::from_f64(n as f64);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropyMean { logits, labels: labels.to_vec(), probs },
        ))
    }

    // ---- backward ----

    /// Reverse-mode accumulation from a scalar output. Gradients of every
    /// node up to `out` are (re)computed.
    pub fn backward(&mut self, out: VarId) -> Result<()> {
        if self.nodes[out.0].data.len() != 1 {
            return Err(Error::Argument(format!(
                "backward requires a scalar output, got shape {:?}",
                self.nodes[out.0].shape
            )));
        }
        for node in &mut self.nodes[..=out.0] {
            node.grad = vec![F::zero(); node.data.len()];
        }
        self.nodes[out.0].grad[0] = F::one();

        for id in (0..=out.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(id);
            let node = &rest[0];
            match &node.op {
                Op::Leaf => {}
                Op::Relu { x } => {
                    let p = &mut before[x.0];
                    for ((g, pg), &pv) in node.grad.iter().zip(p.grad.iter_mut()).zip(p.data.iter()) {
                        if pv > F::zero() {
                            *pg += *g;
                        }
                    }
                }
                Op::Sigmoid { x } => {
                    let p = &mut before[x.0];
                    for ((g, pg), &y) in node.grad.iter().zip(p.grad.iter_mut()).zip(node.data.iter()) {
                        *pg += *g * y * (F::one() - y);
                    }
                }
                Op::Tanh { x } => {
                    let p = &mut before[x.0];
                    for ((g, pg), &y) in node.grad.iter().zip(p.grad.iter_mut()).zip(node.data.iter()) {
                        *pg += *g * (F::one() - y * y);
                    }
                }
                Op::Abs { x } => {
                    // subgradient 0 at the origin
                    let p = &mut before[x.0];
                    for ((g, pg), &pv) in node.grad.iter().zip(p.grad.iter_mut()).zip(p.data.iter()) {
                        if pv > F::zero() {
                            *pg += *g;
                        } else if pv < F::zero() {
                            *pg -= *g;
                        }
                    }
                }
                Op::Sqrt { x } => {
                    let p = &mut before[x.0];
                    let two = F::from_f64(2.0);
                    for ((g, pg), &y) in node.grad.iter().zip(p.grad.iter_mut()).zip(node.data.iter()) {
                        *pg += *g / (two * y);
                    }
                }
                Op::ClampMin { x, min } => {
                    let p = &mut before[x.0];
                    for ((g, pg), &pv) in node.grad.iter().zip(p.grad.iter_mut()).zip(p.data.iter()) {
                        if pv > *min {
                            *pg += *g;
                        }
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    for (pg, &g) in before[a.0].grad.iter_mut().zip(node.grad.iter()) {
                        *pg += g;
                    }
                    for (pg, &g) in before[b.0].grad.iter_mut().zip(node.grad.iter()) {
                        *pg += g;
                    }
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    for (pg, &g) in before[a.0].grad.iter_mut().zip(node.grad.iter()) {
                        *pg += g;
                    }
                    for (pg, &g) in before[b.0].grad.iter_mut().zip(node.grad.iter()) {
                        *pg -= g;
                    }
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    let da: Vec<F> = node
                        .grad
                        .iter()
                        .zip(before[b.0].data.iter())
                        .map(|(&g, &bv)| g * bv)
                        .collect();
                    let db: Vec<F> = node
                        .grad
                        .iter()
                        .zip(before[a.0].data.iter())
                        .map(|(&g, &av)| g * av)
                        .collect();
                    for (pg, d) in before[a.0].grad.iter_mut().zip(da) {
                        *pg += d;
                    }
                    for (pg, d) in before[b.0].grad.iter_mut().zip(db) {
                        *pg += d;
                    }
                }
                Op::ScalarMul { x, c } => {
                    let c = *c;
                    for (pg, &g) in before[x.0].grad.iter_mut().zip(node.grad.iter()) {
                        *pg += g * c;
                    }
                }
                Op::AddAtLabels { x } | Op::Reshape { x } => {
                    for (pg, &g) in before[x.0].grad.iter_mut().zip(node.grad.iter()) {
                        *pg += g;
                    }
                }
                Op::SumAll { x } => {
                    let g = node.grad[0];
                    for pg in before[x.0].grad.iter_mut() {
                        *pg += g;
                    }
                }
                Op::Linear { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let r = before[x.0].shape[0];
                    let d = before[x.0].shape[1];
                    let k = before[w.0].shape[0];
                    let mut dx = vec![F::zero(); r * d];
                    mm_nn(&node.grad, &before[w.0].data, r, k, d, &mut dx);
                    let mut dw = vec![F::zero(); k * d];
                    mm_tn(&node.grad, &before[x.0].data, k, r, d, &mut dw);
                    for (pg, d) in before[x.0].grad.iter_mut().zip(dx) {
                        *pg += d;
                    }
                    for (pg, d) in before[w.0].grad.iter_mut().zip(dw) {
                        *pg += d;
                    }
                    for row in node.grad.chunks_exact(k) {
                        for (pg, &g) in before[b.0].grad.iter_mut().zip(row.iter()) {
                            *pg += g;
                        }
                    }
                }
                Op::MatmulNt { a, b } => {
                    let (a, b) = (*a, *b);
                    let n = before[a.0].shape[0];
                    let d = before[a.0].shape[1];
                    let c = before[b.0].shape[0];
                    let mut da = vec![F::zero(); n * d];
                    mm_nn(&node.grad, &before[b.0].data, n, c, d, &mut da);
                    let mut db = vec![F::zero(); c * d];
                    mm_tn(&node.grad, &before[a.0].data, c, n, d, &mut db);
                    for (pg, dv) in before[a.0].grad.iter_mut().zip(da) {
                        *pg += dv;
                    }
                    for (pg, dv) in before[b.0].grad.iter_mut().zip(db) {
                        *pg += dv;
                    }
                }
                Op::RowNormalize { x, norms } => {
                    let x = *x;
                    let d = node.shape[1];
                    let p = &mut before[x.0];
                    for (i, &norm) in norms.iter().enumerate() {
                        let g = &node.grad[i * d..(i + 1) * d];
                        let y = &node.data[i * d..(i + 1) * d];
                        let mut gy = F::zero();
                        for (&gv, &yv) in g.iter().zip(y.iter()) {
                            gy += gv * yv;
                        }
                        let pg = &mut p.grad[i * d..(i + 1) * d];
                        for ((pgv, &gv), &yv) in pg.iter_mut().zip(g.iter()).zip(y.iter()) {
                            *pgv += (gv - gy * yv) / norm;
                        }
                    }
                }
                Op::Conv2d { x, k, stride, pad } => {
                    let (x, k, stride, pad) = (*x, *k, *stride, *pad);
                    let xs = before[x.0].shape.clone();
                    let ks = before[k.0].shape.clone();
                    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                    let (o, kh, kw) = (ks[0], ks[2], ks[3]);
                    let (ho, wo) = (node.shape[2], node.shape[3]);
                    let cols = n * ho * wo;
                    let ckk = c * kh * kw;
                    // g as o x (n*ho*wo)
                    let mut g_mat = vec![F::zero(); o * cols];
                    for ni in 0..n {
                        for oi in 0..o {
                            let src = &node.grad[((ni * o + oi) * ho * wo)..][..ho * wo];
                            g_mat[oi * cols + ni * ho * wo..][..ho * wo].copy_from_slice(src);
                        }
                    }
                    // recompute the unfolded input rather than keeping it
                    let col = im2col(&before[x.0].data, n, c, h, w, kh, kw, stride, pad);
                    let mut dk = vec![F::zero(); o * ckk];
                    mm_nt(&g_mat, &col, o, cols, ckk, &mut dk);
                    let mut dcol = vec![F::zero(); ckk * cols];
                    mm_tn(&before[k.0].data, &g_mat, ckk, o, cols, &mut dcol);
                    let mut dx = vec![F::zero(); before[x.0].data.len()];
                    col2im(&dcol, &mut dx, n, c, h, w, kh, kw, stride, pad);
                    for (pg, d) in before[x.0].grad.iter_mut().zip(dx) {
                        *pg += d;
                    }
                    for (pg, d) in before[k.0].grad.iter_mut().zip(dk) {
                        *pg += d;
                    }
                }
                Op::BatchNorm { x, gamma, beta, x_hat, inv_std, train } => {
                    let (x, gamma, beta, train) = (*x, *gamma, *beta, *train);
                    let (n, c, spatial) = channel_layout(&node.shape).expect("validated at forward");
                    let m = F::from_f64((n * spatial) as f64);
                    let mut dgamma = vec![F::zero(); c];
                    let mut dbeta = vec![F::zero(); c];
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * spatial;
                            let mut dg = F::zero();
                            let mut db = F::zero();
                            for s in 0..spatial {
                                let g = node.grad[base + s];
                                dg += g * x_hat[base + s];
                                db += g;
                            }
                            dgamma[ci] += dg;
                            dbeta[ci] += db;
                        }
                    }
                    let mut dx = vec![F::zero(); node.grad.len()];
                    if train {
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * spatial;
                                let ga = before[gamma.0].data[ci];
                                let scale = ga * inv_std[ci];
                                let mean_g = dbeta[ci] / m;
                                let mean_gx = dgamma[ci] / m;
                                for s in 0..spatial {
                                    let g = node.grad[base + s];
                                    dx[base + s] = scale * (g - mean_g - x_hat[base + s] * mean_gx);
                                }
                            }
                        }
                    } else {
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * spatial;
                                let scale = before[gamma.0].data[ci] * inv_std[ci];
                                for s in 0..spatial {
                                    dx[base + s] = scale * node.grad[base + s];
                                }
                            }
                        }
                    }
                    for (pg, d) in before[x.0].grad.iter_mut().zip(dx) {
                        *pg += d;
                    }
                    for (pg, d) in before[gamma.0].grad.iter_mut().zip(dgamma) {
                        *pg += d;
                    }
                    for (pg, d) in before[beta.0].grad.iter_mut().zip(dbeta) {
                        *pg += d;
                    }
                }
                Op::GlobalAvgPool { x } => {
                    let x = *x;
                    let spatial: usize = before[x.0].shape[2] * before[x.0].shape[3];
                    let count = F::from_f64(spatial as f64);
                    let p = &mut before[x.0];
                    for (nc, &g) in node.grad.iter().enumerate() {
                        let spread = g / count;
                        for pg in p.grad[nc * spatial..(nc + 1) * spatial].iter_mut() {
                            *pg += spread;
                        }
                    }
                }
                Op::SoftThreshold { x, tau } => {
                    // pass-through outside the dead zone; d/dtau = -sign(x) there
                    let (x, tau) = (*x, *tau);
                    let spatial: usize = before[x.0].shape[2] * before[x.0].shape[3];
                    let nc = before[tau.0].data.len();
                    let tau_vals: Vec<F> = before[tau.0].data.clone();
                    let mut dtau = vec![F::zero(); nc];
                    {
                        let px = &mut before[x.0];
                        for (i, (&t, dt)) in tau_vals.iter().zip(dtau.iter_mut()).enumerate() {
                            let base = i * spatial;
                            for s in 0..spatial {
                                let xv = px.data[base + s];
                                let g = node.grad[base + s];
                                if xv > t {
                                    px.grad[base + s] += g;
                                    *dt -= g;
                                } else if xv < -t {
                                    px.grad[base + s] += g;
                                    *dt += g;
                                }
                            }
                        }
                    }
                    for (pg, d) in before[tau.0].grad.iter_mut().zip(dtau) {
                        *pg += d;
                    }
                }
                Op::FlattenFrames { x } => {
                    let x = *x;
                    let (n, c) = (before[x.0].shape[0], before[x.0].shape[1]);
                    let (t, w) = (before[x.0].shape[2], before[x.0].shape[3]);
                    let p = &mut before[x.0];
                    for ni in 0..n {
                        for ci in 0..c {
                            for ti in 0..t {
                                let src = &node.grad[((ni * t + ti) * c + ci) * w..][..w];
                                let dst = &mut p.grad[((ni * c + ci) * t + ti) * w..][..w];
                                for (pg, &g) in dst.iter_mut().zip(src.iter()) {
                                    *pg += g;
                                }
                            }
                        }
                    }
                }
                Op::SoftmaxRows { x } => {
                    let x = *x;
                    let t = node.shape[1];
                    let p = &mut before[x.0];
                    for i in 0..node.shape[0] {
                        let y = &node.data[i * t..(i + 1) * t];
                        let g = &node.grad[i * t..(i + 1) * t];
                        let mut gy = F::zero();
                        for (&gv, &yv) in g.iter().zip(y.iter()) {
                            gy += gv * yv;
                        }
                        let pg = &mut p.grad[i * t..(i + 1) * t];
                        for ((pgv, &gv), &yv) in pg.iter_mut().zip(g.iter()).zip(y.iter()) {
                            *pgv += yv * (gv - gy);
                        }
                    }
                }
                Op::WeightedSum { frames, weights } => {
                    let (frames, weights) = (*frames, *weights);
                    let (n, t, d) = (
                        before[frames.0].shape[0],
                        before[frames.0].shape[1],
                        before[frames.0].shape[2],
                    );
                    let mut dframes = vec![F::zero(); n * t * d];
                    let mut dweights = vec![F::zero(); n * t];
                    for ni in 0..n {
                        let g = &node.grad[ni * d..(ni + 1) * d];
                        for ti in 0..t {
                            let a = before[weights.0].data[ni * t + ti];
                            let row = &before[frames.0].data[(ni * t + ti) * d..][..d];
                            let df = &mut dframes[(ni * t + ti) * d..][..d];
                            let mut dw = F::zero();
                            for ((dfv, &gv), &fv) in df.iter_mut().zip(g.iter()).zip(row.iter()) {
                                *dfv += gv * a;
                                dw += gv * fv;
                            }
                            dweights[ni * t + ti] = dw;
                        }
                    }
                    for (pg, dv) in before[frames.0].grad.iter_mut().zip(dframes) {
                        *pg += dv;
                    }
                    for (pg, dv) in before[weights.0].grad.iter_mut().zip(dweights) {
                        *pg += dv;
                    }
                }
                Op::ConcatCols { a, b } => {
                    let (a, b) = (*a, *b);
                    let da = before[a.0].shape[1];
                    let db = before[b.0].shape[1];
                    let n = before[a.0].shape[0];
                    for i in 0..n {
                        let g = &node.grad[i * (da + db)..(i + 1) * (da + db)];
                        for (pg, &gv) in before[a.0].grad[i * da..(i + 1) * da].iter_mut().zip(&g[..da]) {
                            *pg += gv;
                        }
                        for (pg, &gv) in before[b.0].grad[i * db..(i + 1) * db].iter_mut().zip(&g[da..]) {
                            *pg += gv;
                        }
                    }
                }
                Op::CrossEntropyMean { logits, labels, probs } => {
                    let logits = *logits;
                    let c = before[logits.0].shape[1];
                    let n = labels.len();
                    let g = node.grad[0] / F::from_f64(n as f64);
                    let p = &mut before[logits.0];
                    for i in 0..n {
                        let pr = &probs[i * c..(i + 1) * c];
                        let pg = &mut p.grad[i * c..(i + 1) * c];
                        for (j, (pgv, &pv)) in pg.iter_mut().zip(pr.iter()).enumerate() {
                            let onehot = if j == labels[i] { F::one() } else { F::zero() };
                            *pgv += g * (pv - onehot);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
