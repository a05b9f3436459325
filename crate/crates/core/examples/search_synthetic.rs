//! Five-epoch architecture search on a generated corpus.
//!
//! cargo run --release --example search_synthetic -- [seed] [channels] [batch] [lr_w] [lr_alpha] [vocab_size] [stem|context] [epochs]

use std::time::Instant;

use darts_ner::cli::Variant;
use darts_ner::data::MetaFeatures;
use darts_ner::model::{ModelConfig, Network};
use darts_ner::pipeline::Prepared;
use darts_ner::primitives::PrimitiveKind;
use darts_ner::search::{
    derive_genotype, run_search, split_search_data, ArchParameters, SearchConfig, SearchSplits, ALPHA_INIT_SIGMA,
};
use darts_ner::cell::CellConfig;

fn main() -> darts_ner::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(0);
    let channels: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(16);
    let batch_size: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(32);
    let lr_w: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.025);
    let lr_alpha: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(3e-4);
    let vocab_size: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(300);
    let variant = match args.get(6).map(String::as_str) {
        Some("context") => Variant::Context,
        _ => Variant::Stem,
    };
    let epochs: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(5);

    let meta = MetaFeatures {
        script_size: 40,
        agglutination_depth: 3,
        ..MetaFeatures::default()
    };
    let data = Prepared::generate(&meta, variant, 2000, seed, vocab_size)?;
    let (w, a) = split_search_data(&data.train, 0.5, seed)?;
    let splits = SearchSplits {
        weight: data.align(&w, 64)?,
        alpha: data.align(&a, 64)?,
    };
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
    let mut net = Network::supernet(&config, seed)?;
    let mut alphas = ArchParameters::init(&config.cell, seed, ALPHA_INIT_SIGMA)?;
    let mut cfg = SearchConfig {
        seed,
        batch_size,
        epochs,
        ..SearchConfig::default()
    };
    cfg.weights.lr = lr_w;
    cfg.alphas.lr = lr_alpha;
    let start = Instant::now();
    let out = run_search(&mut net, &mut alphas, &splits, &cfg, data.tags.tags())?;
    println!(
        "epoch 0: val_loss {:.4} val_f1 {:.4}",
        out.baseline.loss, out.baseline.report.weighted_f1
    );
    for s in &out.epochs {
        println!(
            "epoch {}: train {:.4} arch {:.4} val_loss {:.4} val_f1 {:.4} val_acc {:.4}",
            s.epoch,
            s.train_loss,
            s.arch_loss.unwrap_or(f64::NAN),
            s.val_loss,
            s.val_f1_weighted,
            s.val_accuracy
        );
    }
    println!("search took {:.1}s", start.elapsed().as_secs_f64());
    let genotype = derive_genotype(&alphas, &config.cell)?;
    for (j, node) in genotype.nodes.iter().enumerate() {
        let ops: Vec<String> = node.inputs.iter().map(|i| format!("{}<-{}", i.op, i.from)).collect();
        println!("node {j}: {}", ops.join(", "));
    }
    for (e, w) in alphas.weights().iter().enumerate() {
        let w: Vec<String> = w.iter().map(|v| format!("{v:.3}")).collect();
        println!("edge {e}: [{}]", w.join(", "));
    }
    Ok(())
}
