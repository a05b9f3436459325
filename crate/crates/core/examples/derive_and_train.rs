//! Search, derive a genotype, retrain the discrete network from scratch and
//! print the test report.
//!
//! cargo run --release --example derive_and_train -- [seed] [train_epochs]

use std::time::Instant;

use darts_ner::cell::CellConfig;
use darts_ner::cli::Variant;
use darts_ner::data::MetaFeatures;
use darts_ner::model::{ModelConfig, Network};
use darts_ner::nn::Module;
use darts_ner::pipeline::Prepared;
use darts_ner::primitives::PrimitiveKind;
use darts_ner::rng::derive_seed;
use darts_ner::search::{
    build_discrete_model, derive_genotype, evaluate, run_search, split_search_data, train_final, ArchParameters,
    SearchConfig, SearchSplits, TrainConfig, ALPHA_INIT_SIGMA,
};

fn main() -> darts_ner::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(0);
    let train_epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let channels = 16;

    let meta = MetaFeatures {
        script_size: 40,
        agglutination_depth: 3,
        ..MetaFeatures::default()
    };
    let data = Prepared::generate(&meta, Variant::Stem, 2000, seed, 800)?;
    let config = ModelConfig {
        vocab_size: data.vocab.len(),
        embed_dim: channels,
        channels,
        num_cells: 2,
        num_labels: data.tags.len(),
        dropout_p: 0.1,
        cell: CellConfig {
            nodes: 3,
            channels,
            primitives: PrimitiveKind::default_names(),
        },
    };

    let (w, a) = split_search_data(&data.train, 0.5, seed)?;
    let splits = SearchSplits {
        weight: data.align(&w, 64)?,
        alpha: data.align(&a, 64)?,
    };
    let mut search = SearchConfig {
        seed,
        batch_size: 8,
        ..SearchConfig::default()
    };
    search.weights.lr = 0.1;
    let mut supernet = Network::supernet(&config, seed)?;
    let mut alphas = ArchParameters::init(&config.cell, seed, ALPHA_INIT_SIGMA)?;
    let start = Instant::now();
    run_search(&mut supernet, &mut alphas, &splits, &search, data.tags.tags())?;
    let genotype = derive_genotype(&alphas, &config.cell)?;
    println!("search took {:.1}s", start.elapsed().as_secs_f64());
    print!("{}", genotype.to_json()?);

    let net = build_discrete_model(&genotype, &config, derive_seed(seed, "final"))?;
    println!(
        "parameters: super-network {} discrete {}",
        supernet.num_params(),
        net.num_params()
    );
    let mut train = TrainConfig {
        epochs: train_epochs,
        batch_size: 8,
        seed,
        ..TrainConfig::default()
    };
    train.optimizer.lr = 0.1;
    let start = Instant::now();
    let outcome = train_final(
        net,
        &data.align(&data.train, 64)?,
        &data.align(&data.val, 64)?,
        &train,
        data.tags.tags(),
    )?;
    for s in &outcome.stats {
        println!(
            "epoch {}: train {:.4} val_loss {:.4} val_f1 {:.4} val_acc {:.4}",
            s.epoch, s.train_loss, s.val_loss, s.val_f1_weighted, s.val_accuracy
        );
    }
    println!("training took {:.1}s", start.elapsed().as_secs_f64());
    let test = evaluate(&outcome.net, None, &data.align(&data.test, 64)?, 32, data.tags.tags())?;
    print!("{}", test.report.to_text());
    Ok(())
}
