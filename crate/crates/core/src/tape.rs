//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! Every forward operation appends one node holding its output value and
//! enough saved state to run its backward rule. Nodes are appended in
//! evaluation order, so the tape is topologically sorted by construction and
//! [`Tape::backward`] visits each node exactly once by walking it in reverse.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch statistics produced by a training-mode normalization.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Number of unmasked positions the statistics were taken over.
    pub count: usize,
}

/// Result of a masked cross-entropy evaluation.
#[derive(Debug, Clone, Copy)]
pub struct MaskedLoss {
    pub loss: Var,
    /// Number of positions that contributed to the loss.
    pub evaluated: usize,
}

impl MaskedLoss {
    /// True when every label was ignored and the loss was defined as zero.
    pub fn all_ignored(&self) -> bool {
        self.evaluated == 0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    MaskTime(Var, Arc<[f64]>),
    Relu(Var),
    Sum(Var),
    MatMul(Var, Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    Conv1d {
        x: Var,
        w: Var,
        dilation: usize,
        groups: usize,
    },
    ChannelBias(Var, Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        mask: Arc<[f64]>,
        count: usize,
    },
    FrozenNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        mask: Arc<[f64]>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        probs: Vec<f64>,
    },
    Transpose12(Var),
    Reshape(Var),
    Mix {
        inputs: Vec<Var>,
        weights: Var,
    },
    Concat(Vec<Var>),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `var`, or zeros of length `len` when nothing flowed to it.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

/// A single-threaded recording of tensor operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[var.0].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn shape3(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(Error::Shape {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![0, 0, 0],
        }),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf whose gradient is tracked.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.data(a).iter().map(|x| x * c).collect();
        let value = Tensor::new(self.shape(a), data).expect("shape preserved");
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    /// Elementwise product with a constant of the same shape (dropout masks).
    pub fn mul_const(&mut self, a: Var, factor: Vec<f64>) -> Result<Var> {
        if factor.len() != self.value(a).numel() {
            return Err(Error::Shape {
                op: "mul_const",
                lhs: self.shape(a).to_vec(),
                rhs: vec![factor.len()],
            });
        }
        let data = self.data(a).iter().zip(&factor).map(|(x, f)| x * f).collect();
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::MulConst(a, factor), rg))
    }

    /// Multiplies `[batch, channels, time]` by a `[batch, time]` 0/1 mask.
    pub fn mask_time(&mut self, a: Var, mask: &Arc<[f64]>) -> Result<Var> {
        let (b, c, t) = shape3(self.value(a), "mask_time")?;
        if mask.len() != b * t {
            return Err(Error::Shape {
                op: "mask_time",
                lhs: self.shape(a).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let src = self.data(a);
        let mut data = vec![0.0; src.len()];
        for bi in 0..b {
            let m = &mask[bi * t..(bi + 1) * t];
            for ci in 0..c {
                let off = (bi * c + ci) * t;
                for ti in 0..t {
                    data[off + ti] = src[off + ti] * m[ti];
                }
            }
        }
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::MaskTime(a, Arc::clone(mask)), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.data(a).iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let value = Tensor::new(self.shape(a), data).expect("shape preserved");
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, k2, n) = match (self.shape(a), self.shape(b)) {
            (&[m, k], &[k2, n]) => (m, k, k2, n),
            _ => (0, 1, 0, 0),
        };
        if k != k2 || self.value(a).rank() != 2 || self.value(b).rank() != 2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = ad[i * k + p];
                let row = &bd[p * n..(p + 1) * n];
                for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                    *o += av * bv;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Softmax along `axis`, computed with max-subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = softmax_forward(self.value(x), axis)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Softmax { x, axis }, rg))
    }

    /// One-dimensional convolution over `[batch, channels, time]` with "same"
    /// zero padding. `w` has shape `[out_channels, in_channels / groups, kernel]`.
    pub fn conv1d(&mut self, x: Var, w: Var, dilation: usize, groups: usize) -> Result<Var> {
        let (b, cin, t) = shape3(self.value(x), "conv1d")?;
        let (cout, cin_g, k) = shape3(self.value(w), "conv1d")?;
        if dilation == 0 || groups == 0 {
            return Err(Error::config("conv1d: dilation and groups must be positive"));
        }
        if cin % groups != 0 || cout % groups != 0 {
            return Err(Error::config(format!(
                "conv1d: {cin} input / {cout} output channels not divisible into {groups} groups"
            )));
        }
        if cin / groups != cin_g {
            return Err(Error::Shape {
                op: "conv1d",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(w).to_vec(),
            });
        }
        let left = dilation * (k - 1) / 2;
        let cout_g = cout / groups;
        let (xd, wd) = (self.data(x), self.data(w));
        let mut out = vec![0.0; b * cout * t];
        for bi in 0..b {
            for co in 0..cout {
                let grp = co / cout_g;
                let orow = &mut out[(bi * cout + co) * t..(bi * cout + co + 1) * t];
                for cj in 0..cin_g {
                    let ci = grp * cin_g + cj;
                    let xrow = &xd[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
                    for ki in 0..k {
                        let wv = wd[(co * cin_g + cj) * k + ki];
                        let shift = (ki * dilation) as isize - left as isize;
                        let (lo, hi) = valid_range(t, shift);
                        for ti in lo..hi {
                            orow[ti] += wv * xrow[(ti as isize + shift) as usize];
                        }
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(
            Tensor::new([b, cout, t], out)?,
            Op::Conv1d {
                x,
                w,
                dilation,
                groups,
            },
            rg,
        ))
    }

    /// Adds a per-channel bias `[channels]` to `[batch, channels, time]`.
    pub fn channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (b, c, t) = shape3(self.value(x), "channel_bias")?;
        if self.shape(bias) != [c] {
            return Err(Error::Shape {
                op: "channel_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let mut out = self.data(x).to_vec();
        let bd = self.data(bias);
        for bi in 0..b {
            for ci in 0..c {
                out[(bi * c + ci) * t..(bi * c + ci + 1) * t]
                    .iter_mut()
                    .for_each(|v| *v += bd[ci]);
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor::new([b, c, t], out)?, Op::ChannelBias(x, bias), rg))
    }

    fn check_norm_args(&self, x: Var, gamma: Var, beta: Var, mask: &[f64]) -> Result<(usize, usize, usize)> {
        let (b, c, t) = shape3(self.value(x), "batch_norm")?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || mask.len() != b * t {
            return Err(Error::Shape {
                op: "batch_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        Ok((b, c, t))
    }

    /// Per-channel normalization with statistics over unmasked
    /// `(batch, time)` positions. Masked positions output zero.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mask: &Arc<[f64]>,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let (b, c, t) = self.check_norm_args(x, gamma, beta, mask)?;
        let count = mask.iter().filter(|&&m| m != 0.0).count();
        let (xd, gd, bd) = (self.data(x), self.data(gamma), self.data(beta));
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        let mut inv_std = vec![0.0; c];
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        if count > 0 {
            let n = count as f64;
            for ci in 0..c {
                let mut s = 0.0;
                for bi in 0..b {
                    let off = (bi * c + ci) * t;
                    for ti in 0..t {
                        s += mask[bi * t + ti] * xd[off + ti];
                    }
                }
                let mu = s / n;
                let mut ss = 0.0;
                for bi in 0..b {
                    let off = (bi * c + ci) * t;
                    for ti in 0..t {
                        let d = xd[off + ti] - mu;
                        ss += mask[bi * t + ti] * d * d;
                    }
                }
                mean[ci] = mu;
                var[ci] = ss / n;
                inv_std[ci] = 1.0 / (var[ci] + eps).sqrt();
                for bi in 0..b {
                    let off = (bi * c + ci) * t;
                    for ti in 0..t {
                        let m = mask[bi * t + ti];
                        let h = (xd[off + ti] - mu) * inv_std[ci] * m;
                        xhat[off + ti] = h;
                        out[off + ti] = (gd[ci] * h + bd[ci]) * m;
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            Tensor::new([b, c, t], out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mask: Arc::clone(mask),
                count,
            },
            rg,
        );
        Ok((v, BatchStats { mean, var, count }))
    }

    /// Normalization with fixed (running) statistics, as used at evaluation.
    pub fn frozen_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        mask: &Arc<[f64]>,
        eps: f64,
    ) -> Result<Var> {
        let (b, c, t) = self.check_norm_args(x, gamma, beta, mask)?;
        let (xd, gd, bd) = (self.data(x), self.data(gamma), self.data(beta));
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * t;
                for ti in 0..t {
                    let m = mask[bi * t + ti];
                    let h = (xd[off + ti] - mean[ci]) * inv_std[ci] * m;
                    xhat[off + ti] = h;
                    out[off + ti] = (gd[ci] * h + bd[ci]) * m;
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new([b, c, t], out)?,
            Op::FrozenNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mask: Arc::clone(mask),
            },
            rg,
        ))
    }

    /// Single-head scaled dot-product attention over `[batch, time, dim]`.
    ///
    /// Keys at masked positions are excluded from every softmax. A query row
    /// with no valid key produces a zero output row.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: &[f64]) -> Result<Var> {
        self.same_shape("attention", q, k)?;
        self.same_shape("attention", q, v)?;
        let (b, t, d) = shape3(self.value(q), "attention")?;
        if mask.len() != b * t {
            return Err(Error::Shape {
                op: "attention",
                lhs: self.shape(q).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let scale = 1.0 / (d as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut probs = vec![0.0; b * t * t];
        let mut out = vec![0.0; b * t * d];
        for bi in 0..b {
            let m = &mask[bi * t..(bi + 1) * t];
            if m.iter().all(|&x| x == 0.0) {
                continue;
            }
            for i in 0..t {
                let qi = &qd[(bi * t + i) * d..(bi * t + i + 1) * d];
                let row = &mut probs[(bi * t + i) * t..(bi * t + i + 1) * t];
                let mut max = f64::NEG_INFINITY;
                for j in 0..t {
                    if m[j] == 0.0 {
                        continue;
                    }
                    let kj = &kd[(bi * t + j) * d..(bi * t + j + 1) * d];
                    let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    row[j] = s;
                    max = max.max(s);
                }
                let mut z = 0.0;
                for j in 0..t {
                    if m[j] == 0.0 {
                        row[j] = 0.0;
                    } else {
                        row[j] = (row[j] - max).exp();
                        z += row[j];
                    }
                }
                let orow = &mut out[(bi * t + i) * d..(bi * t + i + 1) * d];
                for j in 0..t {
                    row[j] /= z;
                    let p = row[j];
                    if p != 0.0 {
                        let vj = &vd[(bi * t + j) * d..(bi * t + j + 1) * d];
                        orow.iter_mut().zip(vj).for_each(|(o, x)| *o += p * x);
                    }
                }
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(Tensor::new([b, t, d], out)?, Op::Attention { q, k, v, probs }, rg))
    }

    /// Swaps the last two axes of a rank-3 tensor.
    pub fn transpose12(&mut self, x: Var) -> Result<Var> {
        let (a, b, c) = shape3(self.value(x), "transpose12")?;
        let out = transpose12_data(self.data(x), a, b, c);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new([a, c, b], out)?, Op::Transpose12(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Weighted sum `Σ_k weights[k] · inputs[k]` with a rank-1 weight vector.
    pub fn mix(&mut self, inputs: &[Var], weights: Var) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(Error::config("mix: no inputs"));
        };
        if self.shape(weights) != [inputs.len()] {
            return Err(Error::Shape {
                op: "mix",
                lhs: vec![inputs.len()],
                rhs: self.shape(weights).to_vec(),
            });
        }
        for &x in inputs {
            self.same_shape("mix", first, x)?;
        }
        let wd = self.data(weights);
        let mut out = vec![0.0; self.value(first).numel()];
        for (&x, &w) in inputs.iter().zip(wd) {
            out.iter_mut().zip(self.data(x)).for_each(|(o, v)| *o += w * v);
        }
        let rg = self.rg(weights) || inputs.iter().any(|&x| self.rg(x));
        let value = Tensor::new(self.shape(first), out)?;
        Ok(self.push(
            value,
            Op::Mix {
                inputs: inputs.to_vec(),
                weights,
            },
            rg,
        ))
    }

    /// Concatenates rank-3 tensors along axis 1.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(Error::config("concat: no inputs"));
        };
        let (b, _, t) = shape3(self.value(first), "concat")?;
        let mut total = 0;
        for &x in inputs {
            let (bx, cx, tx) = shape3(self.value(x), "concat")?;
            if bx != b || tx != t {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(x).to_vec(),
                });
            }
            total += cx;
        }
        let mut out = Vec::with_capacity(b * total * t);
        for bi in 0..b {
            for &x in inputs {
                let c = self.shape(x)[1];
                out.extend_from_slice(&self.data(x)[bi * c * t..(bi + 1) * c * t]);
            }
        }
        let rg = inputs.iter().any(|&x| self.rg(x));
        Ok(self.push(Tensor::new([b, total, t], out)?, Op::Concat(inputs.to_vec()), rg))
    }

    /// Looks up rows of a `[vocab, dim]` table for `[batch, time]` ids and
    /// returns them channel-first as `[batch, dim, time]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], batch: usize, time: usize) -> Result<Var> {
        let (vocab, dim) = match *self.shape(table) {
            [v, d] => (v, d),
            _ => {
                return Err(Error::Shape {
                    op: "embedding",
                    lhs: self.shape(table).to_vec(),
                    rhs: vec![batch, time],
                })
            }
        };
        if ids.len() != batch * time {
            return Err(Error::Shape {
                op: "embedding",
                lhs: vec![batch, time],
                rhs: vec![ids.len()],
            });
        }
        if let Some((pos, &id)) = ids.iter().enumerate().find(|(_, &id)| id >= vocab) {
            return Err(Error::TokenOutOfRange {
                row: pos / time,
                pos: pos % time,
                id,
                vocab,
            });
        }
        let td = self.data(table);
        let mut out = vec![0.0; batch * dim * time];
        for bi in 0..batch {
            for ti in 0..time {
                let id = ids[bi * time + ti];
                for e in 0..dim {
                    out[(bi * dim + e) * time + ti] = td[id * dim + e];
                }
            }
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new([batch, dim, time], out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood over positions whose label is not
    /// `ignore_id`. With every position ignored the loss is defined as zero.
    pub fn cross_entropy_masked(&mut self, logits: Var, labels: &[i64], ignore_id: i64) -> Result<MaskedLoss> {
        let (n, classes) = match *self.shape(logits) {
            [n, c] => (n, c),
            _ => {
                return Err(Error::Shape {
                    op: "cross_entropy",
                    lhs: self.shape(logits).to_vec(),
                    rhs: vec![labels.len()],
                })
            }
        };
        if labels.len() != n {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: self.shape(logits).to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let mut targets = Vec::with_capacity(n);
        for &l in labels {
            if l == ignore_id {
                targets.push(None);
            } else if l >= 0 && (l as usize) < classes {
                targets.push(Some(l as usize));
            } else {
                return Err(Error::Contract(format!(
                    "label {l} outside [0, {classes}) and not the ignore id {ignore_id}"
                )));
            }
        }
        let ld = self.data(logits);
        let mut probs = vec![0.0; n * classes];
        let mut total = 0.0;
        let mut count = 0;
        for (i, target) in targets.iter().enumerate() {
            let Some(y) = *target else { continue };
            let row = &ld[i * classes..(i + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + z.ln();
            for (p, x) in probs[i * classes..(i + 1) * classes].iter_mut().zip(row) {
                *p = (x - max).exp() / z;
            }
            total += lse - row[y];
            count += 1;
        }
        let loss = if count == 0 {
            log::warn!("cross_entropy_masked: every label ignored, loss defined as 0");
            0.0
        } else {
            total / count as f64
        };
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("cross entropy evaluated to {loss}")));
        }
        let rg = self.rg(logits);
        let var = self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            },
            rg,
        );
        Ok(MaskedLoss {
            loss: var,
            evaluated: count,
        })
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let value = &self.nodes[loss.0].value;
        if value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let numel = |v: Var| self.nodes[v.0].value.numel();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        accumulate(grads, v, g.len(), |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let bd = self.data(*b);
                    accumulate(grads, *a, g.len(), |s| {
                        for ((s, g), y) in s.iter_mut().zip(g).zip(bd) {
                            *s += g * y;
                        }
                    });
                }
                if self.rg(*b) {
                    let ad = self.data(*a);
                    accumulate(grads, *b, g.len(), |s| {
                        for ((s, g), x) in s.iter_mut().zip(g).zip(ad) {
                            *s += g * x;
                        }
                    });
                }
            }
            Op::Scale(a, c) => {
                accumulate(grads, *a, g.len(), |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g * c));
            }
            Op::MulConst(a, f) => {
                accumulate(grads, *a, g.len(), |s| {
                    for ((s, g), f) in s.iter_mut().zip(g).zip(f) {
                        *s += g * f;
                    }
                });
            }
            Op::MaskTime(a, mask) => {
                let t = self.shape(*a)[2];
                accumulate(grads, *a, g.len(), |s| {
                    for (row, (srow, grow)) in s.chunks_mut(t).zip(g.chunks(t)).enumerate() {
                        let bi = row / self.shape(*a)[1];
                        let m = &mask[bi * t..(bi + 1) * t];
                        for ti in 0..t {
                            srow[ti] += grow[ti] * m[ti];
                        }
                    }
                });
            }
            Op::Relu(a) => {
                let ad = self.data(*a);
                accumulate(grads, *a, g.len(), |s| {
                    for ((s, g), x) in s.iter_mut().zip(g).zip(ad) {
                        if *x > 0.0 {
                            *s += g;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = g[0];
                accumulate(grads, *a, numel(*a), |s| s.iter_mut().for_each(|s| *s += g0));
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let (ad, bd) = (self.data(*a), self.data(*b));
                if self.rg(*a) {
                    // dA = G · Bᵀ
                    accumulate(grads, *a, m * k, |s| {
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g[i * n + j] * bd[p * n + j];
                                }
                                s[i * k + p] += acc;
                            }
                        }
                    });
                }
                if self.rg(*b) {
                    // dB = Aᵀ · G
                    accumulate(grads, *b, k * n, |s| {
                        for i in 0..m {
                            for p in 0..k {
                                let av = ad[i * k + p];
                                for j in 0..n {
                                    s[p * n + j] += av * g[i * n + j];
                                }
                            }
                        }
                    });
                }
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                accumulate(grads, *x, y.len(), |s| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * len + j) * inner + i;
                            let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                            for j in 0..len {
                                s[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::Conv1d {
                x,
                w,
                dilation,
                groups,
            } => {
                let (b, cin, t) = (self.shape(*x)[0], self.shape(*x)[1], self.shape(*x)[2]);
                let (cout, cin_g, k) = (self.shape(*w)[0], self.shape(*w)[1], self.shape(*w)[2]);
                let cout_g = cout / groups;
                let left = dilation * (k - 1) / 2;
                let (xd, wd) = (self.data(*x), self.data(*w));
                if self.rg(*x) {
                    accumulate(grads, *x, xd.len(), |s| {
                        for bi in 0..b {
                            for co in 0..cout {
                                let grp = co / cout_g;
                                let grow = &g[(bi * cout + co) * t..(bi * cout + co + 1) * t];
                                for cj in 0..cin_g {
                                    let ci = grp * cin_g + cj;
                                    let srow = &mut s[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
                                    for ki in 0..k {
                                        let wv = wd[(co * cin_g + cj) * k + ki];
                                        let shift = (ki * dilation) as isize - left as isize;
                                        let (lo, hi) = valid_range(t, shift);
                                        for ti in lo..hi {
                                            srow[(ti as isize + shift) as usize] += wv * grow[ti];
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
                if self.rg(*w) {
                    accumulate(grads, *w, wd.len(), |s| {
                        for bi in 0..b {
                            for co in 0..cout {
                                let grp = co / cout_g;
                                let grow = &g[(bi * cout + co) * t..(bi * cout + co + 1) * t];
                                for cj in 0..cin_g {
                                    let ci = grp * cin_g + cj;
                                    let xrow = &xd[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
                                    for ki in 0..k {
                                        let shift = (ki * dilation) as isize - left as isize;
                                        let (lo, hi) = valid_range(t, shift);
                                        let mut acc = 0.0;
                                        for ti in lo..hi {
                                            acc += grow[ti] * xrow[(ti as isize + shift) as usize];
                                        }
                                        s[(co * cin_g + cj) * k + ki] += acc;
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::ChannelBias(x, bias) => {
                let (c, t) = (self.shape(*x)[1], self.shape(*x)[2]);
                if self.rg(*x) {
                    accumulate(grads, *x, g.len(), |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                }
                if self.rg(*bias) {
                    accumulate(grads, *bias, c, |s| {
                        for (row, grow) in g.chunks(t).enumerate() {
                            s[row % c] += grow.iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mask,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let (b, c, t) = (self.shape(*x)[0], self.shape(*x)[1], self.shape(*x)[2]);
                let gd = self.data(*gamma);
                let n = *count as f64;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let off = (bi * c + ci) * t;
                        for ti in 0..t {
                            let gm = g[off + ti] * mask[bi * t + ti];
                            dgamma[ci] += gm * xhat[off + ti];
                            dbeta[ci] += gm;
                        }
                    }
                }
                if self.rg(*x) {
                    accumulate(grads, *x, g.len(), |s| {
                        for ci in 0..c {
                            // dxhat = g·γ; Σ dxhat = γ·dβ; Σ dxhat·xhat = γ·dγ
                            let sum_dxhat = gd[ci] * dbeta[ci];
                            let sum_dxhat_xhat = gd[ci] * dgamma[ci];
                            let k = inv_std[ci] / n;
                            for bi in 0..b {
                                let off = (bi * c + ci) * t;
                                for ti in 0..t {
                                    let m = mask[bi * t + ti];
                                    if m == 0.0 {
                                        continue;
                                    }
                                    let dxhat = g[off + ti] * m * gd[ci];
                                    s[off + ti] +=
                                        k * (n * dxhat - sum_dxhat - xhat[off + ti] * sum_dxhat_xhat);
                                }
                            }
                        }
                    });
                }
                if self.rg(*gamma) {
                    accumulate(grads, *gamma, c, |s| s.iter_mut().zip(&dgamma).for_each(|(s, d)| *s += d));
                }
                if self.rg(*beta) {
                    accumulate(grads, *beta, c, |s| s.iter_mut().zip(&dbeta).for_each(|(s, d)| *s += d));
                }
            }
            Op::FrozenNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mask,
            } => {
                let (b, c, t) = (self.shape(*x)[0], self.shape(*x)[1], self.shape(*x)[2]);
                let gd = self.data(*gamma);
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let off = (bi * c + ci) * t;
                        for ti in 0..t {
                            let gm = g[off + ti] * mask[bi * t + ti];
                            dgamma[ci] += gm * xhat[off + ti];
                            dbeta[ci] += gm;
                        }
                    }
                }
                if self.rg(*x) {
                    accumulate(grads, *x, g.len(), |s| {
                        for bi in 0..b {
                            for ci in 0..c {
                                let off = (bi * c + ci) * t;
                                for ti in 0..t {
                                    s[off + ti] += g[off + ti] * mask[bi * t + ti] * gd[ci] * inv_std[ci];
                                }
                            }
                        }
                    });
                }
                if self.rg(*gamma) {
                    accumulate(grads, *gamma, c, |s| s.iter_mut().zip(&dgamma).for_each(|(s, d)| *s += d));
                }
                if self.rg(*beta) {
                    accumulate(grads, *beta, c, |s| s.iter_mut().zip(&dbeta).for_each(|(s, d)| *s += d));
                }
            }
            Op::Attention { q, k, v, probs } => {
                let (b, t, d) = (self.shape(*q)[0], self.shape(*q)[1], self.shape(*q)[2]);
                let scale = 1.0 / (d as f64).sqrt();
                let (qd, kd, vd) = (self.data(*q), self.data(*k), self.data(*v));
                let mut dq = vec![0.0; qd.len()];
                let mut dk = vec![0.0; kd.len()];
                let mut dv = vec![0.0; vd.len()];
                let mut ds = vec![0.0; t];
                for bi in 0..b {
                    for i in 0..t {
                        let p = &probs[(bi * t + i) * t..(bi * t + i + 1) * t];
                        let go = &g[(bi * t + i) * d..(bi * t + i + 1) * d];
                        let mut dot = 0.0;
                        for j in 0..t {
                            if p[j] == 0.0 {
                                ds[j] = 0.0;
                                continue;
                            }
                            let vj = &vd[(bi * t + j) * d..(bi * t + j + 1) * d];
                            let dp: f64 = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                            ds[j] = dp;
                            dot += p[j] * dp;
                            let dvj = &mut dv[(bi * t + j) * d..(bi * t + j + 1) * d];
                            dvj.iter_mut().zip(go).for_each(|(s, g)| *s += p[j] * g);
                        }
                        for j in 0..t {
                            if p[j] == 0.0 {
                                continue;
                            }
                            let dsj = p[j] * (ds[j] - dot) * scale;
                            let kj = &kd[(bi * t + j) * d..(bi * t + j + 1) * d];
                            let qi = &qd[(bi * t + i) * d..(bi * t + i + 1) * d];
                            let dqi = &mut dq[(bi * t + i) * d..(bi * t + i + 1) * d];
                            dqi.iter_mut().zip(kj).for_each(|(s, x)| *s += dsj * x);
                            let dkj = &mut dk[(bi * t + j) * d..(bi * t + j + 1) * d];
                            dkj.iter_mut().zip(qi).for_each(|(s, x)| *s += dsj * x);
                        }
                    }
                }
                for (var, delta) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if self.rg(var) {
                        accumulate(grads, var, delta.len(), |s| {
                            s.iter_mut().zip(&delta).for_each(|(s, d)| *s += d)
                        });
                    }
                }
            }
            Op::Transpose12(x) => {
                let (a, bb, c) = (self.shape(*x)[0], self.shape(*x)[1], self.shape(*x)[2]);
                let back = transpose12_data(g, a, c, bb);
                accumulate(grads, *x, g.len(), |s| s.iter_mut().zip(&back).for_each(|(s, d)| *s += d));
            }
            Op::Reshape(x) => {
                accumulate(grads, *x, g.len(), |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
            }
            Op::Mix { inputs, weights } => {
                let wd = self.data(*weights);
                for (k, &x) in inputs.iter().enumerate() {
                    if self.rg(x) {
                        let w = wd[k];
                        accumulate(grads, x, g.len(), |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += w * g));
                    }
                }
                if self.rg(*weights) {
                    let dw: Vec<f64> = inputs
                        .iter()
                        .map(|&x| self.data(x).iter().zip(g).map(|(a, b)| a * b).sum())
                        .collect();
                    accumulate(grads, *weights, dw.len(), |s| s.iter_mut().zip(&dw).for_each(|(s, d)| *s += d));
                }
            }
            Op::Concat(inputs) => {
                let (b, total, t) = (node.value.shape()[0], node.value.shape()[1], node.value.shape()[2]);
                let mut offset = 0;
                for &x in inputs {
                    let c = self.shape(x)[1];
                    if self.rg(x) {
                        accumulate(grads, x, b * c * t, |s| {
                            for bi in 0..b {
                                let src = &g[(bi * total + offset) * t..(bi * total + offset + c) * t];
                                s[bi * c * t..(bi + 1) * c * t]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(s, g)| *s += g);
                            }
                        });
                    }
                    offset += c;
                }
            }
            Op::Embedding { table, ids } => {
                let dim = self.shape(*table)[1];
                let (batch, time) = (node.value.shape()[0], node.value.shape()[2]);
                accumulate(grads, *table, numel(*table), |s| {
                    for bi in 0..batch {
                        for ti in 0..time {
                            let id = ids[bi * time + ti];
                            for e in 0..dim {
                                s[id * dim + e] += g[(bi * dim + e) * time + ti];
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let classes = self.shape(*logits)[1];
                let scale = g[0] / *count as f64;
                accumulate(grads, *logits, probs.len(), |s| {
                    for (i, target) in targets.iter().enumerate() {
                        let Some(y) = *target else { continue };
                        for c in 0..classes {
                            let onehot = if c == y { 1.0 } else { 0.0 };
                            s[i * classes + c] += scale * (probs[i * classes + c] - onehot);
                        }
                    }
                });
            }
        }
    }
}

/// Output positions `lo..hi` whose input `t + shift` lies inside `0..len`.
fn valid_range(len: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn transpose12_data(src: &[f64], a: usize, b: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for ai in 0..a {
        for bi in 0..b {
            for ci in 0..c {
                out[(ai * c + ci) * b + bi] = src[(ai * b + bi) * c + ci];
            }
        }
    }
    out
}

/// Softmax of a plain tensor along `axis`; shared by the tape op and callers
/// that only need values (architecture weights, genotype derivation).
pub fn softmax_forward(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::Contract(format!(
            "softmax axis {axis} out of range for rank {}",
            x.rank()
        )));
    }
    if x.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("softmax input contains NaN".into()));
    }
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let max = (0..len).map(|j| xd[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..len {
                let e = (xd[idx(j)] - max).exp();
                out[idx(j)] = e;
                z += e;
            }
            for j in 0..len {
                out[idx(j)] /= z;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

/// Softmax of a single logit vector.
pub fn softmax_vec(logits: &[f64]) -> Vec<f64> {
    let t = Tensor::from_vec(logits.to_vec());
    softmax_forward(&t, 0)
        .map(Tensor::into_data)
        .unwrap_or_else(|_| vec![f64::NAN; logits.len()])
}
