//! Named parameters, the per-forward recording context, and the small
//! building blocks shared by primitives, cells and the model.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tape::{BatchStats, Gradients, Tape, Var};
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;
pub const NORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// A tensor with a stable hierarchical name. Buffers (running statistics)
/// are parameters with `trainable == false`.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    name: String,
    pub value: Tensor,
    trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
            trainable: true,
        }
    }

    pub fn buffer(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
            trainable: false,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }
}

pub trait Module {
    fn visit(&self, f: &mut dyn FnMut(&Param));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    /// Number of trainable scalars.
    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| {
            if p.trainable() {
                n += p.value.numel();
            }
        });
        n
    }

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.value.zero_grad());
    }
}

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization.
pub fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("numel matches shape")
}

/// State for one forward pass: the tape, the batch mask, the mode and the
/// parameter bindings made so far.
pub struct Ctx {
    pub tape: Tape,
    mode: Mode,
    track_weights: bool,
    bound: HashMap<String, Var>,
    batch_stats: Vec<(String, BatchStats)>,
    mask: Arc<[f64]>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl Ctx {
    /// `mask` is the `[batch, time]` 0/1 validity mask of the batch. When
    /// `track_weights` is false, parameters are recorded as constants.
    pub fn new(mode: Mode, mask: Vec<f64>, track_weights: bool) -> Self {
        Self {
            tape: Tape::new(),
            mode,
            track_weights,
            bound: HashMap::new(),
            batch_stats: Vec::new(),
            mask: mask.into(),
            dropout_rng: None,
        }
    }

    pub fn with_dropout_rng(mut self, rng: ChaCha8Rng) -> Self {
        self.dropout_rng = Some(rng);
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn mask(&self) -> Arc<[f64]> {
        Arc::clone(&self.mask)
    }

    /// Records `p` on the tape once and returns its handle.
    pub fn bind(&mut self, p: &Param) -> Var {
        if let Some(&v) = self.bound.get(p.name()) {
            return v;
        }
        let v = if self.track_weights && p.trainable() {
            self.tape.leaf(p.value.clone())
        } else {
            self.tape.constant(p.value.clone())
        };
        self.bound.insert(p.name().to_string(), v);
        v
    }

    pub fn record_stats(&mut self, norm_name: &str, stats: BatchStats) {
        self.batch_stats.push((norm_name.to_string(), stats));
    }

    pub fn batch_stats(&self) -> &[(String, BatchStats)] {
        &self.batch_stats
    }

    /// Inverted dropout in train mode; identity otherwise.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if self.mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let rng = self
            .dropout_rng
            .get_or_insert_with(|| crate::rng::component_rng(0, "dropout"));
        let keep = 1.0 - p;
        let n = self.tape.value(x).numel();
        let factor = (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.tape.mul_const(x, factor)
    }

    /// Adds the gradients of every bound parameter of `module` into the
    /// parameters' gradient buffers.
    pub fn accumulate_grads(&self, grads: &Gradients, module: &mut dyn Module) {
        module.visit_mut(&mut |p| {
            if let Some(&v) = self.bound.get(p.name()) {
                if let Some(g) = grads.get(v) {
                    p.value.accumulate_grad(g);
                }
            }
        });
    }

    /// Folds recorded batch statistics into the running averages of `module`.
    pub fn update_running_stats(&self, module: &mut dyn Module) {
        if self.batch_stats.is_empty() {
            return;
        }
        let stats: HashMap<&str, &BatchStats> =
            self.batch_stats.iter().map(|(n, s)| (n.as_str(), s)).collect();
        module.visit_mut(&mut |p| {
            let (prefix, field) = match p.name().rsplit_once('.') {
                Some(parts) => parts,
                None => return,
            };
            let Some(s) = stats.get(prefix) else { return };
            if s.count == 0 {
                return;
            }
            let correction = if s.count > 1 {
                s.count as f64 / (s.count - 1) as f64
            } else {
                1.0
            };
            let src: Vec<f64> = match field {
                "running_mean" => s.mean.clone(),
                "running_var" => s.var.iter().map(|v| v * correction).collect(),
                _ => return,
            };
            for (r, v) in p.value.data_mut().iter_mut().zip(src) {
                *r = (1.0 - NORM_MOMENTUM) * *r + NORM_MOMENTUM * v;
            }
        });
    }
}

/// Convolution weight of shape `[out, in / groups, kernel]`, no bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: Param,
    pub dilation: usize,
    pub groups: usize,
}

impl Conv {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        dilation: usize,
        groups: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let cin_g = cin / groups;
        let weight = Param::new(
            format!("{name}.weight"),
            uniform_init(&[cout, cin_g, kernel], cin_g * kernel, rng),
        );
        Self {
            weight,
            dilation,
            groups,
        }
    }

    pub fn pointwise(name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(name, cin, cout, 1, 1, 1, rng)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.bind(&self.weight);
        ctx.tape.conv1d(x, w, self.dilation, self.groups)
    }
}

impl Module for Conv {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
    }
}

/// Per-channel normalization over unmasked positions with learned affine
/// parameters and running statistics for evaluation.
#[derive(Debug, Clone)]
pub struct Norm {
    name: String,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    /// When false the block passes its input through (masked) unchanged.
    pub enabled: bool,
}

impl Norm {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            gamma: Param::new(format!("{name}.gamma"), Tensor::full([channels], 1.0)),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros([channels])),
            running_mean: Param::buffer(format!("{name}.running_mean"), Tensor::zeros([channels])),
            running_var: Param::buffer(format!("{name}.running_var"), Tensor::full([channels], 1.0)),
            enabled: true,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let mask = ctx.mask();
        if !self.enabled {
            return ctx.tape.mask_time(x, &mask);
        }
        let gamma = ctx.bind(&self.gamma);
        let beta = ctx.bind(&self.beta);
        match ctx.mode() {
            Mode::Train => {
                let (y, stats) = ctx.tape.batch_norm(x, gamma, beta, &mask, NORM_EPS)?;
                ctx.record_stats(&self.name, stats);
                Ok(y)
            }
            Mode::Eval => ctx.tape.frozen_norm(
                x,
                gamma,
                beta,
                self.running_mean.value.data(),
                self.running_var.value.data(),
                &mask,
                NORM_EPS,
            ),
        }
    }
}

impl Module for Norm {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

/// ReLU, then a 1×1 convolution, then normalization.
#[derive(Debug, Clone)]
pub struct ReluConvNorm {
    pub conv: Conv,
    pub norm: Norm,
}

impl ReluConvNorm {
    pub fn new(name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv::pointwise(&format!("{name}.conv"), cin, cout, rng),
            norm: Norm::new(&format!("{name}.norm"), cout),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = ctx.tape.relu(x);
        let h = self.conv.forward(ctx, h)?;
        self.norm.forward(ctx, h)
    }
}

impl Module for ReluConvNorm {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.conv.visit(f);
        self.norm.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv.visit_mut(f);
        self.norm.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::component_rng;

    #[test]
    fn dropout_is_identity_in_eval_and_scales_in_train() {
        let mut ctx = Ctx::new(Mode::Eval, vec![1.0; 4], true);
        let x = ctx.tape.constant(Tensor::full([1, 1, 4], 2.0));
        assert_eq!(ctx.dropout(x, 0.5).unwrap(), x);

        let mut ctx = Ctx::new(Mode::Train, vec![1.0; 4000], true).with_dropout_rng(component_rng(1, "d"));
        let x = ctx.tape.constant(Tensor::full([1, 1, 4000], 1.0));
        let y = ctx.dropout(x, 0.25).unwrap();
        let vals = ctx.tape.value(y).data();
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15));
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn norm_of_zero_input_is_finite() {
        let norm = Norm::new("n", 3);
        let mut ctx = Ctx::new(Mode::Train, vec![1.0, 1.0, 0.0], true);
        let x = ctx.tape.constant(Tensor::zeros([1, 3, 3]));
        let y = norm.forward(&mut ctx, x).unwrap();
        assert!(ctx.tape.value(y).is_finite());
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let mut norm = Norm::new("n", 1);
        let mut ctx = Ctx::new(Mode::Train, vec![1.0, 1.0, 1.0, 0.0], true);
        let x = ctx.tape.constant(Tensor::new([1, 1, 4], vec![1.0, 2.0, 3.0, 100.0]).unwrap());
        norm.forward(&mut ctx, x).unwrap();
        ctx.update_running_stats(&mut norm);
        // masked position excluded: mean 2, unbiased var 1
        assert!((norm.running_mean.value.data()[0] - 0.2).abs() < 1e-12);
        assert!((norm.running_var.value.data()[0] - 1.0).abs() < 1e-12);
    }
}
