//! Drives every command-line step in a scratch directory with a small
//! configuration and prints the resulting report.
//!
//! cargo run --release --example cli_pipeline -- [output_dir]

use std::path::PathBuf;

fn main() {
    let dir: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("darts-ner-pipeline"));
    std::fs::create_dir_all(&dir).expect("create output directory");
    let p = |n: &str| dir.join(n).to_string_lossy().into_owned();
    let config = serde_json::json!({
        "train_corpus": p("data/train.conll"),
        "val_corpus": p("data/val.conll"),
        "test_corpus": p("data/test.conll"),
        "lexicon": p("data/lexicon.json"),
        "vocab": p("work/vocab.json"),
        "alphas": p("work/alphas.json"),
        "genotype": p("work/genotype.json"),
        "checkpoint": p("work/model.json"),
        "curves": p("work/search_curves.csv"),
        "train_curves": p("work/train_curves.csv"),
        "report": p("work/report.json"),
        "n_sentences": 600,
        "vocab_size": 400,
        "embed_dim": 12,
        "channels": 12,
        "epochs": 3,
        "train_epochs": 4,
        "batch_size": 8,
        "lr_w": 0.1,
        "lr_final": 0.1
    });
    let cfg = p("config.json");
    std::fs::write(&cfg, serde_json::to_string_pretty(&config).expect("json")).expect("write config");

    for cmd in ["gen-data", "train-tokenizer", "search", "derive", "train", "eval"] {
        let code = darts_ner::cli::run(["darts-ner", cmd, "--config", cfg.as_str()]);
        println!("{cmd}: exit {code}");
        if code != 0 {
            std::process::exit(code);
        }
    }
    print!("{}", std::fs::read_to_string(p("work/search_curves.csv")).expect("curves"));
    print!("{}", std::fs::read_to_string(p("work/genotype.json")).expect("genotype"));
    print!("{}", std::fs::read_to_string(p("work/report.txt")).expect("report"));
}
