//! Learns a subword vocabulary on a generated corpus and shows how word tags
//! land on first subwords.
//!
//! cargo run --example tokenize_align -- [vocab_size]

use darts_ner::data::{align, gen_synthetic, train_subword, MetaFeatures, TagMap};
use darts_ner::model::IGNORE_ID;
use darts_ner::Result;

fn main() -> Result<()> {
    let vocab_size: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let corpus = gen_synthetic(&MetaFeatures::default(), 500, 0)?;
    let vocab = train_subword(
        corpus.sentences.iter().flat_map(|s| s.words.iter().map(String::as_str)),
        vocab_size,
    )?;
    println!("{} symbols, {} merges", vocab.len(), vocab.merges().len());
    for (a, b) in vocab.merges().iter().take(8) {
        println!("  merge {a} + {b}");
    }

    let tags = TagMap::default();
    let sentence = &corpus.sentences[0];
    let ex = align(sentence, &vocab, 64, &tags)?;
    for ((id, label), w) in ex.ids.iter().zip(&ex.labels).zip(&ex.word_index) {
        let label = if *label == IGNORE_ID {
            "-".to_string()
        } else {
            tags.tag(*label as usize).unwrap_or("?").to_string()
        };
        println!("{:>12}  {:<8} word {w} ({})", vocab.token(*id).unwrap_or("?"), label, sentence.words[*w]);
    }
    Ok(())
}
