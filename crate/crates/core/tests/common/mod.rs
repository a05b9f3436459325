//! Shared setup for the integration tests.
#![allow(dead_code)]

use darts_ner::cell::CellConfig;
use darts_ner::cli::Variant;
use darts_ner::data::MetaFeatures;
use darts_ner::model::{ModelConfig, Network};
use darts_ner::pipeline::Prepared;
use darts_ner::primitives::PrimitiveKind;
use darts_ner::search::{
    run_search, split_search_data, ArchParameters, SearchConfig, SearchOutcome, SearchSplits, TrainConfig,
    ALPHA_INIT_SIGMA,
};
use darts_ner::gradcheck::{module_grad_check, GradCheckReport};
use darts_ner::nn::{Ctx, Mode, Module, Param};
use darts_ner::tape::Var;
use darts_ner::{Result, Tensor};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Settings of the synthetic search runs: a narrow network, small batches
/// and a larger subword vocabulary so whole stems become single tokens.
pub const CHANNELS: usize = 16;
pub const BATCH: usize = 8;
pub const LR_W: f64 = 0.1;
pub const VOCAB: usize = 800;
pub const SENTENCES: usize = 2000;
pub const MAX_LEN: usize = 64;

pub fn meta() -> MetaFeatures {
    MetaFeatures {
        script_size: 40,
        agglutination_depth: 3,
        ..MetaFeatures::default()
    }
}

pub fn prepared(variant: Variant, seed: u64) -> Result<Prepared> {
    Prepared::generate(&meta(), variant, SENTENCES, seed, VOCAB)
}

pub fn model_config(data: &Prepared) -> ModelConfig {
    ModelConfig {
        vocab_size: data.vocab.len(),
        embed_dim: CHANNELS,
        channels: CHANNELS,
        num_cells: 2,
        num_labels: data.tags.len(),
        dropout_p: 0.1,
        cell: CellConfig {
            nodes: 3,
            channels: CHANNELS,
            primitives: PrimitiveKind::default_names(),
        },
    }
}

pub fn search_splits(data: &Prepared, seed: u64) -> Result<SearchSplits> {
    let (w, a) = split_search_data(&data.train, 0.5, seed)?;
    Ok(SearchSplits {
        weight: data.align(&w, MAX_LEN)?,
        alpha: data.align(&a, MAX_LEN)?,
    })
}

pub fn search_config(seed: u64, epochs: usize) -> SearchConfig {
    let mut cfg = SearchConfig {
        seed,
        epochs,
        batch_size: BATCH,
        ..SearchConfig::default()
    };
    cfg.weights.lr = LR_W;
    cfg
}

pub fn train_config(seed: u64, epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig {
        seed,
        epochs,
        batch_size: BATCH,
        ..TrainConfig::default()
    };
    cfg.optimizer.lr = LR_W;
    cfg
}

pub struct Searched {
    pub data: Prepared,
    pub config: ModelConfig,
    pub net: Network,
    pub alphas: ArchParameters,
    pub outcome: SearchOutcome,
}

/// A full search with the settings above.
pub fn search(variant: Variant, seed: u64, epochs: usize) -> Result<Searched> {
    let data = prepared(variant, seed)?;
    let config = model_config(&data);
    let splits = search_splits(&data, seed)?;
    let mut net = Network::supernet(&config, seed)?;
    let mut alphas = ArchParameters::init(&config.cell, seed, ALPHA_INIT_SIGMA)?;
    let outcome = run_search(&mut net, &mut alphas, &splits, &search_config(seed, epochs), data.tags.tags())?;
    Ok(Searched {
        data,
        config,
        net,
        alphas,
        outcome,
    })
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| StandardNormal.sample(rng)).collect()).expect("shape matches")
}

/// A block together with a trainable input, so input gradients are checked
/// alongside the block's own parameters.
pub struct WithInput<M> {
    pub inner: M,
    pub x: Param,
}

impl<M: Module> Module for WithInput<M> {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.inner.visit(f);
        f(&self.x);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.inner.visit_mut(f);
        f(&mut self.x);
    }
}

/// Finite-difference check of `sum(r * fwd(x))` in train mode.
pub fn check_block<M, F>(inner: M, x: Tensor, mask: &[f64], r: &Tensor, fwd: F) -> Result<GradCheckReport>
where
    M: Module,
    F: Fn(&M, &mut Ctx, Var) -> Result<Var>,
{
    let run = |m: &WithInput<M>, track: bool| -> Result<(Ctx, Var)> {
        let mut ctx = Ctx::new(Mode::Train, mask.to_vec(), track);
        let xv = ctx.bind(&m.x);
        let out = fwd(&m.inner, &mut ctx, xv)?;
        let rv = ctx.tape.constant(r.clone());
        let prod = ctx.tape.mul(out, rv)?;
        let loss = ctx.tape.sum(prod);
        Ok((ctx, loss))
    };
    let mut m = WithInput {
        inner,
        x: Param::new("input", x),
    };
    module_grad_check(
        &mut m,
        1e-5,
        |m| {
            let (ctx, loss) = run(m, true)?;
            let grads = ctx.tape.backward(loss)?;
            ctx.accumulate_grads(&grads, m);
            Ok(())
        },
        |m| {
            let (ctx, loss) = run(m, false)?;
            Ok(ctx.tape.value(loss).item())
        },
    )
}
