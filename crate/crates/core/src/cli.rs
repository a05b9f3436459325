//! Command-line front end. Every command reads one JSON run configuration
//! (optional) plus `--key value` overrides and reports failures as a single
//! `error code=<n> kind=<kind> message=<text>` line on stderr.
//!
//! Exit codes: 0 success, 1 configuration, 2 data, 3 numeric.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cell::CellConfig;
use crate::data::{
    align_corpus, gen_context_variant, gen_synthetic, normalize, parse_corpus, serialize_corpus, train_subword,
    AlignedExample, MetaFeatures, Profile, TagMap, TaggedSentence, Vocabulary,
};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{Checkpoint, ModelConfig, Network};
use crate::optim::{RmsPropConfig, SgdConfig};
use crate::primitives::PrimitiveKind;
use crate::search::{
    build_discrete_model, derive_genotype, evaluate, run_search, split_search_data, train_final, write_curves,
    ArchParameters, Genotype, SearchConfig, SearchSplits, TrainConfig, ALPHA_INIT_SIGMA,
};

/// Which generator `gen-data` uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Entity class follows from the word stem.
    #[default]
    Stem,
    /// Entity class follows only from a trigger word two positions earlier.
    Context,
}

/// Every setting of a pipeline run. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train_corpus: PathBuf,
    pub val_corpus: PathBuf,
    pub test_corpus: PathBuf,
    pub lexicon: PathBuf,
    pub vocab: PathBuf,
    pub alphas: PathBuf,
    pub genotype: PathBuf,
    pub checkpoint: PathBuf,
    pub curves: PathBuf,
    pub train_curves: PathBuf,
    pub report: PathBuf,
    /// MetaFeatures JSON for `gen-data`; built-in defaults when absent.
    pub meta: Option<PathBuf>,
    pub variant: Variant,
    pub n_sentences: usize,
    pub profile: Profile,
    pub vocab_size: usize,

    pub embed_dim: usize,
    pub channels: usize,
    pub num_cells: usize,
    pub nodes: usize,
    pub primitives: Vec<String>,
    pub dropout_p: f64,

    pub lr_w: f64,
    pub lr_alpha: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub alpha_init_sigma: f64,
    pub epochs: usize,
    pub train_epochs: usize,
    pub lr_final: f64,
    pub batch_size: usize,
    pub max_len: usize,
    pub ratio: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train_corpus: "data/train.conll".into(),
            val_corpus: "data/val.conll".into(),
            test_corpus: "data/test.conll".into(),
            lexicon: "data/lexicon.json".into(),
            vocab: "work/vocab.json".into(),
            alphas: "work/alphas.json".into(),
            genotype: "work/genotype.json".into(),
            checkpoint: "work/model.json".into(),
            curves: "work/search_curves.csv".into(),
            train_curves: "work/train_curves.csv".into(),
            report: "work/report.json".into(),
            meta: None,
            variant: Variant::Stem,
            n_sentences: 2000,
            profile: Profile::Generic,
            vocab_size: 300,
            embed_dim: 32,
            channels: 32,
            num_cells: 2,
            nodes: 3,
            primitives: PrimitiveKind::default_names(),
            dropout_p: 0.1,
            lr_w: 0.025,
            lr_alpha: 3e-4,
            momentum: 0.9,
            weight_decay: 3e-4,
            grad_clip: 5.0,
            alpha_init_sigma: ALPHA_INIT_SIGMA,
            epochs: 5,
            train_epochs: 10,
            lr_final: 0.025,
            batch_size: 32,
            max_len: 64,
            ratio: 0.5,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Loads `path` (if any) and applies `--key value` / `--key=value`
    /// overrides. Values are read as JSON when they parse, else as strings.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = crate::io::read_text(p).map_err(|e| Error::config(e.to_string()))?;
                serde_json::from_str::<serde_json::Value>(&text)
                    .map_err(|e| Error::config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::json!({}),
        };
        let obj = value
            .as_object_mut()
            .ok_or_else(|| Error::config("run configuration must be a JSON object"))?;
        let mut it = overrides.iter();
        while let Some(arg) = it.next() {
            let key = arg
                .strip_prefix("--")
                .ok_or_else(|| Error::config(format!("expected --key, found {arg:?}")))?;
            let (key, raw) = match key.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| Error::config(format!("--{key} needs a value")))?;
                    (key.to_string(), v.clone())
                }
            };
            let key = key.replace('-', "_");
            let parsed = serde_json::from_str(&raw).unwrap_or(serde_json::Value::String(raw));
            obj.insert(key, parsed);
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sentences == 0 || self.batch_size == 0 || self.max_len == 0 {
            return Err(Error::config("n_sentences, batch_size and max_len must be positive"));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::config(format!("ratio {} outside (0, 1)", self.ratio)));
        }
        if !(self.alpha_init_sigma >= 0.0) {
            return Err(Error::config("alpha_init_sigma must be >= 0"));
        }
        self.sgd(self.lr_w).validate()?;
        self.sgd(self.lr_final).validate()?;
        self.rmsprop().validate()?;
        self.cell().validate()
    }

    pub fn cell(&self) -> CellConfig {
        CellConfig {
            nodes: self.nodes,
            channels: self.channels,
            primitives: self.primitives.clone(),
        }
    }

    pub fn model(&self, vocab_size: usize, num_labels: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            channels: self.channels,
            num_cells: self.num_cells,
            num_labels,
            dropout_p: self.dropout_p,
            cell: self.cell(),
        }
    }

    fn sgd(&self, lr: f64) -> SgdConfig {
        SgdConfig {
            lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            clip_norm: (self.grad_clip > 0.0).then_some(self.grad_clip),
        }
    }

    fn rmsprop(&self) -> RmsPropConfig {
        RmsPropConfig {
            lr: self.lr_alpha,
            ..RmsPropConfig::default()
        }
    }

    pub fn search(&self) -> SearchConfig {
        SearchConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            weights: self.sgd(self.lr_w),
            alphas: self.rmsprop(),
            seed: self.seed,
            shuffle: true,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train_epochs,
            batch_size: self.batch_size,
            optimizer: self.sgd(self.lr_final),
            seed: self.seed,
            shuffle: true,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "darts-ner", about = "Architecture search for sequence labeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `--key value` overrides of configuration fields.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic train/val/test corpora and the gold lexicon.
    GenData(Common),
    /// Learn a subword vocabulary from the training corpus.
    TrainTokenizer(Common),
    /// Run the architecture search; writes curves, logits and genotype.
    Search(Common),
    /// Derive a genotype from saved architecture logits.
    Derive(Common),
    /// Train the derived network from scratch and report test metrics.
    Train(Common),
    /// Evaluate a saved checkpoint on the test corpus.
    Eval(Common),
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Shape { .. } | Error::Contract(_) => 1,
        Error::Numeric(_) => 3,
        Error::Data(_)
        | Error::Parse { .. }
        | Error::Tag { .. }
        | Error::TokenOutOfRange { .. }
        | Error::Format(_)
        | Error::Io { .. }
        | Error::Json(_) => 2,
    }
}

fn kind(code: i32) -> &'static str {
    match code {
        1 => "config",
        2 => "data",
        3 => "numeric",
        _ => "other",
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error code=1 kind=config message={first}");
            return 1;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error code={code} kind={} message={msg}", kind(code));
            code
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    let (common, f): (Common, fn(&RunConfig) -> Result<()>) = match cmd {
        Command::GenData(c) => (c, cmd_gendata),
        Command::TrainTokenizer(c) => (c, cmd_train_tokenizer),
        Command::Search(c) => (c, cmd_search),
        Command::Derive(c) => (c, cmd_derive),
        Command::Train(c) => (c, cmd_train),
        Command::Eval(c) => (c, cmd_eval),
    };
    let cfg = RunConfig::resolve(common.config.as_deref(), &common.overrides)?;
    f(&cfg)
}

fn require(paths: &[&Path]) -> Result<()> {
    match paths.iter().find(|p| !p.exists()) {
        Some(p) => Err(Error::data(format!("missing input file {}", p.display()))),
        None => Ok(()),
    }
}

/// Parses a corpus file and normalizes every word with `profile`.
pub fn load_corpus(path: &Path, profile: Profile) -> Result<Vec<TaggedSentence>> {
    let text = crate::io::read_text(path)?;
    let mut corpus = parse_corpus(&text).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })?;
    for s in &mut corpus {
        for w in &mut s.words {
            *w = normalize(w, profile);
        }
    }
    Ok(corpus)
}

fn load_aligned(path: &Path, cfg: &RunConfig, vocab: &Vocabulary, tags: &TagMap) -> Result<Vec<AlignedExample>> {
    align_corpus(&load_corpus(path, cfg.profile)?, vocab, cfg.max_len, tags)
}

/// Splits `n` items 80/10/10 into (train, val, test) counts.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 8 / 10;
    let val = n / 10;
    (train, val, n - train - val)
}

pub fn cmd_gendata(cfg: &RunConfig) -> Result<()> {
    let meta = match &cfg.meta {
        Some(p) => {
            let text = crate::io::read_text(p).map_err(|e| Error::config(e.to_string()))?;
            serde_json::from_str::<MetaFeatures>(&text).map_err(|e| Error::config(format!("{}: {e}", p.display())))?
        }
        None => MetaFeatures::default(),
    };
    let corpus = match cfg.variant {
        Variant::Stem => gen_synthetic(&meta, cfg.n_sentences, cfg.seed)?,
        Variant::Context => gen_context_variant(&meta, cfg.n_sentences, cfg.seed)?,
    };
    let (n_train, n_val, _) = split_sizes(corpus.sentences.len());
    let s = &corpus.sentences;
    crate::io::write_text(&cfg.train_corpus, &serialize_corpus(&s[..n_train]))?;
    crate::io::write_text(&cfg.val_corpus, &serialize_corpus(&s[n_train..n_train + n_val]))?;
    crate::io::write_text(&cfg.test_corpus, &serialize_corpus(&s[n_train + n_val..]))?;
    crate::io::write_json(&cfg.lexicon, &corpus.lexicon)
}

pub fn cmd_train_tokenizer(cfg: &RunConfig) -> Result<()> {
    require(&[&cfg.train_corpus])?;
    let corpus = load_corpus(&cfg.train_corpus, cfg.profile)?;
    let vocab = train_subword(corpus.iter().flat_map(|s| s.words.iter().map(String::as_str)), cfg.vocab_size)?;
    vocab.save(&cfg.vocab)
}

pub fn cmd_search(cfg: &RunConfig) -> Result<()> {
    require(&[&cfg.train_corpus, &cfg.vocab])?;
    let vocab = Vocabulary::load(&cfg.vocab)?;
    let tags = TagMap::default();
    let corpus = load_corpus(&cfg.train_corpus, cfg.profile)?;
    let (w_part, a_part) = split_search_data(&corpus, cfg.ratio, cfg.seed)?;
    let splits = SearchSplits {
        weight: align_corpus(&w_part, &vocab, cfg.max_len, &tags)?,
        alpha: align_corpus(&a_part, &vocab, cfg.max_len, &tags)?,
    };
    let model_cfg = cfg.model(vocab.len(), tags.len());
    let mut net = Network::supernet(&model_cfg, cfg.seed)?;
    let mut alphas = ArchParameters::init(&model_cfg.cell, cfg.seed, cfg.alpha_init_sigma)?;
    let outcome = run_search(&mut net, &mut alphas, &splits, &cfg.search(), tags.tags())?;
    write_curves(&cfg.curves, &outcome.epochs)?;
    alphas.save(&cfg.alphas)?;
    derive_genotype(&alphas, &model_cfg.cell)?.save(&cfg.genotype)
}

pub fn cmd_derive(cfg: &RunConfig) -> Result<()> {
    require(&[&cfg.alphas])?;
    let alphas = ArchParameters::load(&cfg.alphas)?;
    derive_genotype(&alphas, &cfg.cell())?.save(&cfg.genotype)
}

fn write_report(cfg: &RunConfig, report: &MetricsReport) -> Result<()> {
    report.save(&cfg.report)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    require(&[&cfg.genotype, &cfg.vocab, &cfg.train_corpus, &cfg.val_corpus, &cfg.test_corpus])?;
    let genotype = Genotype::load(&cfg.genotype)?;
    let vocab = Vocabulary::load(&cfg.vocab)?;
    let tags = TagMap::default();
    let train = load_aligned(&cfg.train_corpus, cfg, &vocab, &tags)?;
    let val = load_aligned(&cfg.val_corpus, cfg, &vocab, &tags)?;
    let test = load_aligned(&cfg.test_corpus, cfg, &vocab, &tags)?;
    let model_cfg = cfg.model(vocab.len(), tags.len());
    let net = build_discrete_model(&genotype, &model_cfg, crate::rng::derive_seed(cfg.seed, "final"))?;
    let outcome = train_final(net, &train, &val, &cfg.train(), tags.tags())?;
    write_curves(&cfg.train_curves, &outcome.stats)?;
    Checkpoint::from_network(&outcome.net, None).save(&cfg.checkpoint)?;
    let eval = evaluate(&outcome.net, None, &test, cfg.batch_size, tags.tags())?;
    write_report(cfg, &eval.report)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    require(&[&cfg.checkpoint, &cfg.vocab, &cfg.test_corpus])?;
    let (net, alphas) = Checkpoint::load(&cfg.checkpoint)?.into_network()?;
    let vocab = Vocabulary::load(&cfg.vocab)?;
    let tags = TagMap::default();
    let test = load_aligned(&cfg.test_corpus, cfg, &vocab, &tags)?;
    let eval = evaluate(&net, alphas.as_ref(), &test, cfg.batch_size, tags.tags())?;
    write_report(cfg, &eval.report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_and_type_check() {
        let args: Vec<String> = ["--epochs", "3", "--lr-w=0.5", "--vocab", "v.json"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let cfg = RunConfig::resolve(None, &args).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.lr_w, 0.5);
        assert_eq!(cfg.vocab, PathBuf::from("v.json"));
        let bad = vec!["--epochs".to_string(), "many".to_string()];
        assert!(matches!(RunConfig::resolve(None, &bad), Err(Error::Config(_))));
        let unknown = vec!["--colour".to_string(), "1".to_string()];
        assert!(matches!(RunConfig::resolve(None, &unknown), Err(Error::Config(_))));
    }

    #[test]
    fn split_sizes_80_10_10() {
        assert_eq!(split_sizes(10), (8, 1, 1));
        assert_eq!(split_sizes(2000), (1600, 200, 200));
    }

    #[test]
    fn exit_codes_are_stable() {
        assert_eq!(exit_code(&Error::config("x")), 1);
        assert_eq!(exit_code(&Error::data("x")), 2);
        assert_eq!(exit_code(&Error::Numeric("x".into())), 3);
    }
}
