//! Architecture search: the shared architecture logits, alternating
//! weight/logit updates, genotype derivation and retraining of the derived
//! network from scratch.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cell::{CellConfig, EdgeAlphas};
use crate::data::{batches, AlignedExample, TaggedSentence};
use crate::error::{Error, Result};
use crate::metrics::{self, ClassCounts, MetricsReport};
use crate::model::{BatchInput, ForwardOptions, GradTarget, ModelConfig, Network, IGNORE_ID};
use crate::nn::{Mode, Module};
use crate::optim::{RmsPropConfig, RmsPropState, Sgd, SgdConfig};
use crate::primitives::PrimitiveKind;
use crate::rng::{component_rng, derive_seed};
use crate::tape::softmax_vec;

pub const ALPHA_INIT_SIGMA: f64 = 1e-3;
pub const GENOTYPE_VERSION: u32 = 1;
const ZERO_OP: &str = "zero";

/// Bias added to the initial architecture logits, one vector per edge.
/// This is the extension point for conditioning the search on language
/// descriptors; the default adds nothing.
pub trait AlphaPrior {
    fn edge_bias(&self, cell: &CellConfig) -> Vec<Vec<f64>>;
}

/// The prior that adds nothing.
pub struct NoPrior;

impl AlphaPrior for NoPrior {
    fn edge_bias(&self, cell: &CellConfig) -> Vec<Vec<f64>> {
        vec![vec![0.0; cell.primitives.len()]; cell.num_edges()]
    }
}

/// Architecture logits for every edge of the (shared) cell together with
/// the state of their optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchParameters {
    pub primitives: Vec<String>,
    pub edges: Vec<EdgeAlphas>,
    /// How the logits were initialized, e.g. `gaussian(sigma=0.001)`.
    pub init: String,
    #[serde(default)]
    pub optimizer: RmsPropState,
}

impl ArchParameters {
    pub fn zeros(cell: &CellConfig) -> Self {
        Self {
            primitives: cell.primitives.clone(),
            edges: vec![EdgeAlphas(vec![0.0; cell.primitives.len()]); cell.num_edges()],
            init: "zeros".into(),
            optimizer: RmsPropState::default(),
        }
    }

    /// Gaussian logits with standard deviation `sigma`.
    pub fn init(cell: &CellConfig, seed: u64, sigma: f64) -> Result<Self> {
        Self::init_with_prior(cell, seed, sigma, &NoPrior)
    }

    pub fn init_with_prior(cell: &CellConfig, seed: u64, sigma: f64, prior: &dyn AlphaPrior) -> Result<Self> {
        cell.validate()?;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::config(format!("alpha init sigma {sigma} must be finite and >= 0")));
        }
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::config(e.to_string()))?;
        let mut rng = component_rng(seed, "alphas");
        let bias = prior.edge_bias(cell);
        if bias.len() != cell.num_edges() || bias.iter().any(|b| b.len() != cell.primitives.len()) {
            return Err(Error::config("alpha prior has the wrong layout"));
        }
        let edges = bias
            .into_iter()
            .map(|b| EdgeAlphas(b.into_iter().map(|v| v + normal.sample(&mut rng)).collect()))
            .collect();
        let out = Self {
            primitives: cell.primitives.clone(),
            edges,
            init: format!("gaussian(sigma={sigma})"),
            optimizer: RmsPropState::default(),
        };
        out.check(cell)?;
        Ok(out)
    }

    /// Verifies layout against `cell` and finiteness.
    pub fn check(&self, cell: &CellConfig) -> Result<()> {
        if self.primitives != cell.primitives {
            return Err(Error::config(format!(
                "architecture logits cover {:?}, cell uses {:?}",
                self.primitives, cell.primitives
            )));
        }
        if self.edges.len() != cell.num_edges() {
            return Err(Error::config(format!(
                "{} edge logit vectors for {} edges",
                self.edges.len(),
                cell.num_edges()
            )));
        }
        if let Some(e) = self.edges.iter().position(|e| e.0.len() != self.primitives.len()) {
            return Err(Error::config(format!("edge {e} has the wrong number of logits")));
        }
        if !self.is_finite() {
            return Err(Error::Numeric("architecture logits are not finite".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.edges.iter().flat_map(|e| &e.0).all(|v| v.is_finite())
    }

    /// Mixing weights per edge.
    pub fn weights(&self) -> Vec<Vec<f64>> {
        self.edges.iter().map(EdgeAlphas::softmax).collect()
    }

    /// One optimizer step from per-edge gradients.
    pub fn apply_grads(&mut self, cfg: &RmsPropConfig, grads: &[Vec<f64>]) -> Result<()> {
        let mut params: Vec<Vec<f64>> = self.edges.iter().map(|e| e.0.clone()).collect();
        cfg.step(&mut self.optimizer, &mut params, grads)?;
        for (e, p) in self.edges.iter_mut().zip(params) {
            e.0 = p;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::io::read_json(path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenotypeInput {
    pub from: usize,
    pub op: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenotypeNode {
    pub inputs: Vec<GenotypeInput>,
}

/// The discrete cell: for each internal node, the retained inputs and the
/// single operation on each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genotype {
    pub version: u32,
    pub primitives: Vec<String>,
    pub nodes: Vec<GenotypeNode>,
    pub channels: usize,
}

impl Genotype {
    /// Checks names, fan-in and node count against `cell`.
    pub fn validate_against(&self, cell: &CellConfig) -> Result<()> {
        self.retained(cell).map(|_| ())
    }

    /// `(input state, operation)` pairs per node.
    pub fn retained(&self, cell: &CellConfig) -> Result<Vec<Vec<(usize, PrimitiveKind)>>> {
        if self.version != GENOTYPE_VERSION {
            return Err(Error::Format(format!("unsupported genotype version {}", self.version)));
        }
        if self.nodes.len() != cell.nodes {
            return Err(Error::config(format!(
                "genotype has {} nodes, cell has {}",
                self.nodes.len(),
                cell.nodes
            )));
        }
        self.nodes
            .iter()
            .enumerate()
            .map(|(j, node)| {
                if node.inputs.is_empty() || node.inputs.len() > 2 {
                    return Err(Error::Format(format!(
                        "node {j} retains {} inputs (expected 1 or 2)",
                        node.inputs.len()
                    )));
                }
                let mut seen = Vec::new();
                node.inputs
                    .iter()
                    .map(|inp| {
                        let kind: PrimitiveKind = inp.op.parse()?;
                        if kind == PrimitiveKind::Zero {
                            return Err(Error::Format(format!("node {j} retains the zero operation")));
                        }
                        if inp.from >= j + 2 {
                            return Err(Error::Format(format!(
                                "node {j} reads state {} but only {} precede it",
                                inp.from,
                                j + 2
                            )));
                        }
                        if seen.contains(&inp.from) {
                            return Err(Error::Format(format!("node {j} retains input {} twice", inp.from)));
                        }
                        seen.push(inp.from);
                        Ok((inp.from, kind))
                    })
                    .collect()
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_text(path, &self.to_json()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::io::read_json(path)
    }
}

/// The highest-logit operation on one edge, skipping index `exclude`. Ties
/// go to the lowest index.
pub fn select_op(logits: &[f64], exclude: Option<usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &v) in logits.iter().enumerate() {
        if Some(k) == exclude {
            continue;
        }
        if best.is_none_or(|b| v > logits[b]) {
            best = Some(k);
        }
    }
    best
}

/// Discretizes the architecture: per edge the best non-zero operation, per
/// node the two edges whose selected operation has the largest mixing
/// weight (ties to the lowest edge index, then primitive index).
pub fn derive_genotype(alphas: &ArchParameters, cell: &CellConfig) -> Result<Genotype> {
    alphas.check(cell)?;
    let zero = alphas.primitives.iter().position(|p| p == ZERO_OP);
    if alphas.primitives.iter().all(|p| p == ZERO_OP) {
        return Err(Error::config("primitive set has no operation besides zero"));
    }
    let mut nodes = Vec::with_capacity(cell.nodes);
    for j in 0..cell.nodes {
        let offset = CellConfig::edge_offset(j);
        let mut candidates: Vec<(usize, usize, usize, f64)> = (0..j + 2)
            .map(|input| {
                let e = offset + input;
                let logits = &alphas.edges[e].0;
                let k = select_op(logits, zero).expect("a non-zero primitive exists");
                (input, e, k, softmax_vec(logits)[k])
            })
            .collect();
        candidates.sort_by(|a, b| b.3.total_cmp(&a.3).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        candidates.truncate(2);
        candidates.sort_by_key(|c| c.0);
        nodes.push(GenotypeNode {
            inputs: candidates
                .into_iter()
                .map(|(input, _, k, _)| GenotypeInput {
                    from: input,
                    op: alphas.primitives[k].clone(),
                })
                .collect(),
        });
    }
    Ok(Genotype {
        version: GENOTYPE_VERSION,
        primitives: alphas.primitives.clone(),
        nodes,
        channels: cell.channels,
    })
}

/// A freshly initialized network containing only the genotype's edges.
pub fn build_discrete_model(genotype: &Genotype, config: &ModelConfig, seed: u64) -> Result<Network> {
    Network::discrete(config, genotype, seed)
}

/// Disjoint seeded split: the first part trains weights, the second trains
/// architecture logits.
pub fn split_search_data(
    corpus: &[TaggedSentence],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<TaggedSentence>, Vec<TaggedSentence>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(format!("split ratio {ratio} outside (0, 1)")));
    }
    let n = corpus.len();
    if n < 2 {
        return Err(Error::data(format!("{n} sentences cannot fill two non-empty splits")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut component_rng(seed, "search-split"));
    let n_w = ((n as f64 * ratio).round() as usize).clamp(1, n - 1);
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus[i].clone()).collect();
    Ok((pick(&order[..n_w]), pick(&order[n_w..])))
}

/// One row of the search or training trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Training loss re-evaluated after each architecture step; absent when
    /// no architecture is being searched.
    pub arch_loss: Option<f64>,
    pub val_loss: f64,
    pub val_f1_weighted: f64,
    pub val_accuracy: f64,
    /// Loss of every weight step in order.
    #[serde(skip)]
    pub step_train_losses: Vec<f64>,
}

pub const CURVES_HEADER: [&str; 6] = ["epoch", "train_loss", "arch_loss", "val_loss", "val_f1", "val_acc"];

/// Trajectory as CSV text with the canonical header.
pub fn curves_csv(stats: &[EpochStats]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(CURVES_HEADER).map_err(csv_err)?;
    for s in stats {
        w.write_record([
            s.epoch.to_string(),
            s.train_loss.to_string(),
            s.arch_loss.map(|v| v.to_string()).unwrap_or_default(),
            s.val_loss.to_string(),
            s.val_f1_weighted.to_string(),
            s.val_accuracy.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_curves(path: impl AsRef<Path>, stats: &[EpochStats]) -> Result<()> {
    crate::io::write_text(path, &curves_csv(stats)?)
}

/// Loss and metrics of one full evaluation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Token-weighted mean loss.
    pub loss: f64,
    pub counts: ClassCounts,
    pub report: MetricsReport,
}

/// Eval-mode pass over `examples` in order. Batches are scored on separate
/// threads; results are combined in batch order.
pub fn evaluate(
    net: &Network,
    alphas: Option<&ArchParameters>,
    examples: &[AlignedExample],
    batch_size: usize,
    names: &[String],
) -> Result<Evaluation> {
    let batches = batches(examples, batch_size, None)?;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(batches.len().max(1));
    let chunk = batches.len().div_ceil(workers).max(1);
    let scored: Vec<Result<Vec<(f64, usize, Vec<i64>)>>> = std::thread::scope(|s| {
        let handles: Vec<_> = batches
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|b| net.score(b, alphas)).collect::<Result<Vec<_>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut counts = ClassCounts::new(names.len());
    let mut total = 0.0;
    let mut tokens = 0usize;
    for (part, chunk_batches) in scored.into_iter().zip(batches.chunks(chunk)) {
        for ((loss, evaluated, preds), b) in part?.into_iter().zip(chunk_batches) {
            total += loss * evaluated as f64;
            tokens += evaluated;
            counts.merge(&metrics::count(&preds, &b.label_ids, IGNORE_ID, names.len())?)?;
        }
    }
    let loss = if tokens == 0 { 0.0 } else { total / tokens as f64 };
    let report = metrics::report(&counts, names)?.with_loss(loss);
    Ok(Evaluation { loss, counts, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub weights: SgdConfig,
    pub alphas: RmsPropConfig,
    pub seed: u64,
    /// Reshuffle both splits every epoch.
    pub shuffle: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            weights: SgdConfig::default(),
            alphas: RmsPropConfig::default(),
            seed: 0,
            shuffle: true,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        self.weights.validate()?;
        self.alphas.validate()
    }
}

/// Examples for the weight step and for the architecture step.
#[derive(Debug, Clone)]
pub struct SearchSplits {
    pub weight: Vec<AlignedExample>,
    pub alpha: Vec<AlignedExample>,
}

fn at_step(epoch: usize, step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch} step {step}: {m}")),
        other => other,
    }
}

fn epoch_batches(examples: &[AlignedExample], cfg_batch: usize, shuffle: bool, seed: u64, label: &str) -> Result<Vec<BatchInput>> {
    if shuffle {
        batches(examples, cfg_batch, Some(&mut component_rng(seed, label)))
    } else {
        batches(examples, cfg_batch, None)
    }
}

/// One epoch of alternating updates. Each step (a) moves the weights on a
/// weight-split batch with the logits frozen, (b) moves the logits on an
/// architecture-split batch with the weights frozen (first-order), then
/// (c) re-evaluates the weight-split batch loss for the `arch_loss` column.
#[allow(clippy::too_many_arguments)]
pub fn search_epoch(
    net: &mut Network,
    alphas: &mut ArchParameters,
    w_opt: &mut Sgd,
    a_opt: &RmsPropConfig,
    splits: &SearchSplits,
    cfg: &SearchConfig,
    epoch: usize,
    names: &[String],
) -> Result<EpochStats> {
    if splits.weight.is_empty() || splits.alpha.is_empty() {
        return Err(Error::data("both search splits must be non-empty"));
    }
    let w_batches = epoch_batches(&splits.weight, cfg.batch_size, cfg.shuffle, cfg.seed, &format!("search/{epoch}/w"))?;
    let a_batches = epoch_batches(&splits.alpha, cfg.batch_size, cfg.shuffle, cfg.seed, &format!("search/{epoch}/a"))?;
    let update_stats = w_opt.config.lr > 0.0;
    let mut step_losses = Vec::with_capacity(w_batches.len());
    let mut arch_losses = Vec::with_capacity(w_batches.len());
    for (step, wb) in w_batches.iter().enumerate() {
        let ctx = at_step(epoch, step);
        let seed_w = derive_seed(cfg.seed, &format!("dropout/{epoch}/{step}/w"));
        let seed_a = derive_seed(cfg.seed, &format!("dropout/{epoch}/{step}/a"));

        net.zero_grad();
        let out = net
            .loss(
                wb,
                Some(alphas),
                ForwardOptions {
                    mode: Mode::Train,
                    grads: GradTarget::Weights,
                    update_stats,
                    dropout_seed: seed_w,
                },
            )
            .map_err(&ctx)?;
        if Sgd::grad_norm(net).is_nan() {
            return Err(ctx(Error::Numeric("weight gradient is NaN".into())));
        }
        w_opt.step(net);
        step_losses.push(out.loss);

        let ab = &a_batches[step % a_batches.len()];
        let out = net
            .loss(
                ab,
                Some(alphas),
                ForwardOptions {
                    mode: Mode::Train,
                    grads: GradTarget::Alphas,
                    update_stats: false,
                    dropout_seed: seed_a,
                },
            )
            .map_err(&ctx)?;
        let grads = out.alpha_grads.expect("alpha gradients were requested");
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(ctx(Error::Numeric("architecture gradient is not finite".into())));
        }
        alphas.apply_grads(a_opt, &grads)?;
        if !alphas.is_finite() {
            return Err(ctx(Error::Numeric("architecture logits diverged".into())));
        }

        let after = net
            .loss(
                wb,
                Some(alphas),
                ForwardOptions {
                    mode: Mode::Train,
                    grads: GradTarget::None,
                    update_stats: false,
                    dropout_seed: seed_w,
                },
            )
            .map_err(&ctx)?;
        arch_losses.push(after.loss);
    }
    let val = evaluate(net, Some(alphas), &splits.alpha, cfg.batch_size, names)?;
    Ok(EpochStats {
        epoch,
        train_loss: mean(&step_losses),
        arch_loss: Some(mean(&arch_losses)),
        val_loss: val.loss,
        val_f1_weighted: val.report.weighted_f1,
        val_accuracy: val.report.accuracy,
        step_train_losses: step_losses,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Validation pass before any update.
    pub baseline: Evaluation,
    /// Epochs numbered from 1.
    pub epochs: Vec<EpochStats>,
}

/// Runs `cfg.epochs` search epochs after a baseline validation pass.
pub fn run_search(
    net: &mut Network,
    alphas: &mut ArchParameters,
    splits: &SearchSplits,
    cfg: &SearchConfig,
    names: &[String],
) -> Result<SearchOutcome> {
    cfg.validate()?;
    if !net.is_supernet() {
        return Err(Error::config("search needs a super-network"));
    }
    alphas.check(&net.config().cell)?;
    let baseline = evaluate(net, Some(alphas), &splits.alpha, cfg.batch_size, names)?;
    let mut w_opt = Sgd::new(cfg.weights)?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let stats = search_epoch(net, alphas, &mut w_opt, &cfg.alphas, splits, cfg, epoch, names)?;
        log::info!(
            "search epoch {epoch}: train {:.4} arch {:.4} val {:.4} f1 {:.4}",
            stats.train_loss,
            stats.arch_loss.unwrap_or(f64::NAN),
            stats.val_loss,
            stats.val_f1_weighted
        );
        epochs.push(stats);
    }
    Ok(SearchOutcome { baseline, epochs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: SgdConfig,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            optimizer: SgdConfig::default(),
            seed: 0,
            shuffle: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The network from the epoch with the best validation weighted F1 (the
    /// input network when no epoch ran).
    pub net: Network,
    pub stats: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
}

/// Single-level training of a discrete network, keeping the best epoch by
/// validation weighted F1.
pub fn train_final(
    mut net: Network,
    train: &[AlignedExample],
    val: &[AlignedExample],
    cfg: &TrainConfig,
    names: &[String],
) -> Result<TrainOutcome> {
    if net.is_supernet() {
        return Err(Error::config("final training needs a discrete network"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let mut opt = Sgd::new(cfg.optimizer)?;
    let update_stats = cfg.optimizer.lr > 0.0;
    let mut stats = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Network)> = None;
    for epoch in 1..=cfg.epochs {
        let train_batches = epoch_batches(train, cfg.batch_size, cfg.shuffle, cfg.seed, &format!("train/{epoch}"))?;
        let mut losses = Vec::with_capacity(train_batches.len());
        for (step, b) in train_batches.iter().enumerate() {
            net.zero_grad();
            let out = net
                .loss(
                    b,
                    None,
                    ForwardOptions {
                        mode: Mode::Train,
                        grads: GradTarget::Weights,
                        update_stats,
                        dropout_seed: derive_seed(cfg.seed, &format!("dropout/train/{epoch}/{step}")),
                    },
                )
                .map_err(at_step(epoch, step))?;
            if Sgd::grad_norm(&net).is_nan() {
                return Err(at_step(epoch, step)(Error::Numeric("weight gradient is NaN".into())));
            }
            opt.step(&mut net);
            losses.push(out.loss);
        }
        let v = evaluate(&net, None, val, cfg.batch_size, names)?;
        log::info!(
            "train epoch {epoch}: loss {:.4} val {:.4} f1 {:.4}",
            mean(&losses),
            v.loss,
            v.report.weighted_f1
        );
        if best.as_ref().is_none_or(|(f1, _, _)| v.report.weighted_f1 > *f1) {
            best = Some((v.report.weighted_f1, epoch, net.clone()));
        }
        stats.push(EpochStats {
            epoch,
            train_loss: mean(&losses),
            arch_loss: None,
            val_loss: v.loss,
            val_f1_weighted: v.report.weighted_f1,
            val_accuracy: v.report.accuracy,
            step_train_losses: losses,
        });
    }
    Ok(match best {
        Some((_, epoch, best_net)) => TrainOutcome {
            net: best_net,
            stats,
            best_epoch: Some(epoch),
        },
        None => TrainOutcome {
            net,
            stats,
            best_epoch: None,
        },
    })
}
