//! The end-to-end sequence labeler: embedding → two-branch stem → stacked
//! cells → dropout → per-token linear classifier.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cell::{Cell, CellConfig};
use crate::error::{Error, Result};
use crate::nn::{uniform_init, Conv, Ctx, Mode, Module, Norm, Param};
use crate::rng::component_rng;
use crate::search::{ArchParameters, Genotype};
use crate::tape::{Gradients, Var};
use crate::tensor::Tensor;

/// Label id carried by continuation subwords and padding.
pub const IGNORE_ID: i64 = -100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub channels: usize,
    pub num_cells: usize,
    pub num_labels: usize,
    pub dropout_p: f64,
    pub cell: CellConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.channels == 0 || self.num_cells == 0 {
            return Err(Error::config("model sizes must be positive"));
        }
        if self.num_labels < 2 {
            return Err(Error::config("need at least two labels"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        if self.cell.channels != self.channels {
            return Err(Error::config(format!(
                "cell width {} differs from model width {}",
                self.cell.channels, self.channels
            )));
        }
        self.cell.validate()
    }
}

/// A padded batch. All matrices are row-major `[batch, time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInput {
    pub batch: usize,
    pub time: usize,
    pub token_ids: Vec<usize>,
    pub attention_mask: Vec<f64>,
    pub label_ids: Vec<i64>,
}

impl BatchInput {
    pub fn new(
        batch: usize,
        time: usize,
        token_ids: Vec<usize>,
        attention_mask: Vec<f64>,
        label_ids: Vec<i64>,
    ) -> Result<Self> {
        let n = batch * time;
        if token_ids.len() != n || attention_mask.len() != n || label_ids.len() != n {
            return Err(Error::Shape {
                op: "batch",
                lhs: vec![batch, time],
                rhs: vec![token_ids.len(), attention_mask.len(), label_ids.len()],
            });
        }
        for (i, (&m, &l)) in attention_mask.iter().zip(&label_ids).enumerate() {
            if m != 0.0 && m != 1.0 {
                return Err(Error::data(format!("mask value {m} at {i} is not 0/1")));
            }
            if m == 0.0 && l != IGNORE_ID {
                return Err(Error::data(format!("padded position {i} carries label {l}")));
            }
        }
        Ok(Self {
            batch,
            time,
            token_ids,
            attention_mask,
            label_ids,
        })
    }

    /// Number of positions with a real (non-ignored) label.
    pub fn labelled(&self) -> usize {
        self.label_ids.iter().filter(|&&l| l != IGNORE_ID).count()
    }
}

/// One stem branch: 1×1 convolution from the embedding width followed by
/// normalization.
#[derive(Debug, Clone)]
pub struct StemBranch {
    pub conv: Conv,
    pub norm: Norm,
}

impl StemBranch {
    fn new(name: &str, embed_dim: usize, channels: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        Self {
            conv: Conv::pointwise(&format!("{name}.conv"), embed_dim, channels, rng),
            norm: Norm::new(&format!("{name}.norm"), channels),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.conv.forward(ctx, x)?;
        self.norm.forward(ctx, h)
    }
}

impl Module for StemBranch {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.conv.visit(f);
        self.norm.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv.visit_mut(f);
        self.norm.visit_mut(f);
    }
}

/// Which parameters a training forward pass should produce gradients for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTarget {
    None,
    Weights,
    Alphas,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions {
    pub mode: Mode,
    pub grads: GradTarget,
    /// Fold batch statistics into running averages after the pass.
    pub update_stats: bool,
    pub dropout_seed: u64,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        Self {
            mode: Mode::Eval,
            grads: GradTarget::None,
            update_stats: false,
            dropout_seed: 0,
        }
    }
}

/// Loss of one pass plus any requested architecture gradients. Weight
/// gradients land in the parameters' gradient buffers.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub evaluated: usize,
    pub alpha_grads: Option<Vec<Vec<f64>>>,
}

/// Handles produced by [`Network::forward`].
pub struct ForwardVars {
    /// `[batch, time, num_labels]`
    pub logits: Var,
    /// One leaf per edge holding that edge's architecture logits.
    pub alphas: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
    genotype: Option<Genotype>,
    pub embedding: Param,
    pub stem0: StemBranch,
    pub stem1: StemBranch,
    pub cells: Vec<Cell>,
    pub classifier: Conv,
    pub classifier_bias: Param,
}

impl Network {
    fn build(config: &ModelConfig, genotype: Option<&Genotype>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = component_rng(seed, "model");
        let embedding = Param::new(
            "embedding.weight",
            uniform_init(&[config.vocab_size, config.embed_dim], 1, &mut rng),
        );
        let stem0 = StemBranch::new("stem0", config.embed_dim, config.channels, &mut rng);
        let stem1 = StemBranch::new("stem1", config.embed_dim, config.channels, &mut rng);
        let retained = genotype.map(|g| g.retained(&config.cell)).transpose()?;
        let cells = (0..config.num_cells)
            .map(|k| {
                let name = format!("cells.{k}");
                match &retained {
                    Some(r) => Cell::discrete(&config.cell, r, &name, &mut rng),
                    None => Cell::mixed(&config.cell, &name, &mut rng),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let classifier = Conv::pointwise("classifier", config.channels, config.num_labels, &mut rng);
        let classifier_bias = Param::new("classifier.bias", Tensor::zeros([config.num_labels]));
        Ok(Self {
            config: config.clone(),
            genotype: genotype.cloned(),
            embedding,
            stem0,
            stem1,
            cells,
            classifier,
            classifier_bias,
        })
    }

    /// The search super-network: every edge mixes every primitive.
    pub fn supernet(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::build(config, None, seed)
    }

    /// A fixed network whose cells follow `genotype`, freshly initialized.
    pub fn discrete(config: &ModelConfig, genotype: &Genotype, seed: u64) -> Result<Self> {
        genotype.validate_against(&config.cell)?;
        Self::build(config, Some(genotype), seed)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn genotype(&self) -> Option<&Genotype> {
        self.genotype.as_ref()
    }

    pub fn is_supernet(&self) -> bool {
        self.genotype.is_none()
    }

    /// The two stem states for an embedded batch `[batch, embed_dim, time]`.
    pub fn stem(&self, ctx: &mut Ctx, embedded: Var) -> Result<(Var, Var)> {
        Ok((self.stem0.forward(ctx, embedded)?, self.stem1.forward(ctx, embedded)?))
    }

    /// Records the full forward pass on `ctx.tape`.
    pub fn forward(
        &self,
        ctx: &mut Ctx,
        batch: &BatchInput,
        alphas: Option<&ArchParameters>,
        track_alphas: bool,
    ) -> Result<ForwardVars> {
        let mask = ctx.mask();
        let table = ctx.bind(&self.embedding);
        let emb = ctx.tape.embedding(table, &batch.token_ids, batch.batch, batch.time)?;
        let emb = ctx.tape.mask_time(emb, &mask)?;
        let (s0, s1) = self.stem(ctx, emb)?;

        let mut alpha_vars = Vec::new();
        let mut weights = Vec::new();
        if self.is_supernet() {
            let alphas = alphas.ok_or_else(|| Error::config("super-network forward needs architecture parameters"))?;
            if alphas.edges.len() != self.config.cell.num_edges() {
                return Err(Error::config(format!(
                    "{} edge alpha vectors for a cell with {} edges",
                    alphas.edges.len(),
                    self.config.cell.num_edges()
                )));
            }
            for edge in &alphas.edges {
                let t = Tensor::from_vec(edge.0.clone());
                let v = if track_alphas { ctx.tape.leaf(t) } else { ctx.tape.constant(t) };
                alpha_vars.push(v);
                weights.push(ctx.tape.softmax(v, 0)?);
            }
        }
        let w = (!weights.is_empty()).then_some(weights.as_slice());

        let (mut prev2, mut prev1) = (s0, s1);
        for cell in &self.cells {
            let out = cell.forward(ctx, prev2, prev1, w)?;
            prev2 = prev1;
            prev1 = out;
        }
        let h = ctx.dropout(prev1, self.config.dropout_p)?;
        let logits = self.classifier.forward(ctx, h)?;
        let bias = ctx.bind(&self.classifier_bias);
        let logits = ctx.tape.channel_bias(logits, bias)?;
        let logits = ctx.tape.transpose12(logits)?;
        Ok(ForwardVars {
            logits,
            alphas: alpha_vars,
        })
    }

    fn ctx_for(&self, batch: &BatchInput, opts: &ForwardOptions) -> Ctx {
        Ctx::new(
            opts.mode,
            batch.attention_mask.clone(),
            opts.grads == GradTarget::Weights,
        )
        .with_dropout_rng(component_rng(opts.dropout_seed, "dropout"))
    }

    /// Per-token logits `[batch, time, num_labels]`.
    pub fn logits(&self, batch: &BatchInput, alphas: Option<&ArchParameters>, mode: Mode) -> Result<Tensor> {
        let opts = ForwardOptions {
            mode,
            ..ForwardOptions::eval()
        };
        let mut ctx = self.ctx_for(batch, &opts);
        let out = self.forward(&mut ctx, batch, alphas, false)?;
        Ok(ctx.tape.value(out.logits).clone())
    }

    /// Masked cross-entropy of one batch. Gradients requested through
    /// `opts.grads` are accumulated into parameter buffers (weights) or
    /// returned (architecture logits).
    pub fn loss(
        &mut self,
        batch: &BatchInput,
        alphas: Option<&ArchParameters>,
        opts: ForwardOptions,
    ) -> Result<LossOutput> {
        let mut ctx = self.ctx_for(batch, &opts);
        let track_alphas = opts.grads == GradTarget::Alphas;
        let vars = self.forward(&mut ctx, batch, alphas, track_alphas)?;
        let flat = ctx
            .tape
            .reshape(vars.logits, &[batch.batch * batch.time, self.config.num_labels])?;
        let ce = ctx.tape.cross_entropy_masked(flat, &batch.label_ids, IGNORE_ID)?;
        let loss = ctx.tape.value(ce.loss).item();
        let mut alpha_grads = None;
        if opts.grads != GradTarget::None {
            let grads: Gradients = ctx.tape.backward(ce.loss)?;
            match opts.grads {
                GradTarget::Weights => ctx.accumulate_grads(&grads, self),
                GradTarget::Alphas => {
                    alpha_grads = Some(
                        vars.alphas
                            .iter()
                            .map(|&v| grads.get_or_zeros(v, ctx.tape.value(v).numel()))
                            .collect(),
                    );
                }
                GradTarget::None => {}
            }
        }
        if opts.update_stats {
            ctx.update_running_stats(self);
        }
        Ok(LossOutput {
            loss,
            evaluated: ce.evaluated,
            alpha_grads,
        })
    }

    /// Argmax label per position; padded and ignored positions report
    /// [`IGNORE_ID`].
    pub fn predict(&self, batch: &BatchInput, alphas: Option<&ArchParameters>) -> Result<Vec<i64>> {
        let logits = self.logits(batch, alphas, Mode::Eval)?;
        Ok(argmax_labels(&logits, batch))
    }

    /// Eval-mode loss and predictions from a single forward pass. Returns
    /// `(mean loss, scored tokens, predictions)`.
    pub fn score(&self, batch: &BatchInput, alphas: Option<&ArchParameters>) -> Result<(f64, usize, Vec<i64>)> {
        let mut ctx = self.ctx_for(batch, &ForwardOptions::eval());
        let vars = self.forward(&mut ctx, batch, alphas, false)?;
        let preds = argmax_labels(ctx.tape.value(vars.logits), batch);
        let flat = ctx
            .tape
            .reshape(vars.logits, &[batch.batch * batch.time, self.config.num_labels])?;
        let ce = ctx.tape.cross_entropy_masked(flat, &batch.label_ids, IGNORE_ID)?;
        Ok((ctx.tape.value(ce.loss).item(), ce.evaluated, preds))
    }

    /// Copies every parameter of `other` whose name and shape match one of
    /// ours; returns how many were copied.
    pub fn copy_matching_from(&mut self, other: &Network) -> usize {
        let state = other.state();
        let mut copied = 0;
        self.visit_mut(&mut |p| {
            if let Some(t) = state.get(p.name()) {
                if t.shape() == p.value.shape() {
                    p.value = t.clone();
                    copied += 1;
                }
            }
        });
        copied
    }

    /// Name → tensor for every parameter and buffer.
    pub fn state(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        self.visit(&mut |p| {
            out.insert(p.name().to_string(), p.value.clone());
        });
        out
    }

    /// Overwrites parameters from `state`; names and shapes must match exactly.
    pub fn load_state(&mut self, state: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut err = None;
        let mut seen = 0;
        self.visit_mut(&mut |p| {
            match state.get(p.name()) {
                Some(t) if t.shape() == p.value.shape() => {
                    p.value = t.clone();
                    seen += 1;
                }
                Some(t) => {
                    err.get_or_insert_with(|| {
                        Error::Format(format!(
                            "parameter {} has shape {:?}, checkpoint holds {:?}",
                            p.name(),
                            p.value.shape(),
                            t.shape()
                        ))
                    });
                }
                None => {
                    err.get_or_insert_with(|| Error::Format(format!("checkpoint lacks parameter {}", p.name())));
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != state.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, model has {seen}",
                state.len()
            )));
        }
        Ok(())
    }
}

impl Module for Network {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.embedding);
        self.stem0.visit(f);
        self.stem1.visit(f);
        for c in &self.cells {
            c.visit(f);
        }
        self.classifier.visit(f);
        f(&self.classifier_bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.embedding);
        self.stem0.visit_mut(f);
        self.stem1.visit_mut(f);
        for c in &mut self.cells {
            c.visit_mut(f);
        }
        self.classifier.visit_mut(f);
        f(&mut self.classifier_bias);
    }
}

/// Argmax over `[batch, time, labels]` logits with padded or ignored
/// positions reported as [`IGNORE_ID`].
pub fn argmax_labels(logits: &Tensor, batch: &BatchInput) -> Vec<i64> {
    let labels = logits.shape()[2];
    logits
        .data()
        .chunks(labels)
        .enumerate()
        .map(|(i, row)| {
            if batch.attention_mask[i] == 0.0 || batch.label_ids[i] == IGNORE_ID {
                return IGNORE_ID;
            }
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best as i64
        })
        .collect()
}

/// Serialized model state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub genotype: Option<Genotype>,
    pub params: BTreeMap<String, Tensor>,
    pub alphas: Option<ArchParameters>,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn from_network(net: &Network, alphas: Option<&ArchParameters>) -> Self {
        Self {
            version: Self::VERSION,
            config: net.config.clone(),
            genotype: net.genotype.clone(),
            params: net.state(),
            alphas: alphas.cloned(),
        }
    }

    pub fn into_network(self) -> Result<(Network, Option<ArchParameters>)> {
        if self.version != Self::VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", self.version)));
        }
        let mut net = Network::build(&self.config, self.genotype.as_ref(), 0)?;
        net.load_state(&self.params)?;
        Ok((net, self.alphas))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::io::read_json(path)
    }
}
