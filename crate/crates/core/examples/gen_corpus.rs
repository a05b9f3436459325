//! Generates a tagged corpus from morphological settings and prints a few
//! sentences in both variants.
//!
//! cargo run --example gen_corpus -- [script_size] [agglutination_depth]

use darts_ner::data::{gen_context_variant, gen_synthetic, lexicon_tagger, MetaFeatures};
use darts_ner::Result;

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut meta = MetaFeatures::default();
    if let Some(n) = args.first().and_then(|s| s.parse().ok()) {
        meta.script_size = n;
    }
    if let Some(d) = args.get(1).and_then(|s| s.parse().ok()) {
        meta.agglutination_depth = d;
    }
    println!("{}", serde_json::to_string(&meta)?);

    let stem = gen_synthetic(&meta, 200, 1)?;
    let entity = stem.sentences.iter().flat_map(|s| &s.tags).filter(|t| *t != "O").count();
    let words: usize = stem.sentences.iter().map(|s| s.len()).sum();
    println!("stem variant: {} sentences, {words} words, {entity} entity words", stem.sentences.len());
    for s in stem.sentences.iter().take(3) {
        let guess = lexicon_tagger(&stem.lexicon, &s.words);
        for ((w, t), g) in s.words.iter().zip(&s.tags).zip(&guess) {
            print!("{w}/{t}{} ", if g == t { "" } else { "*" });
        }
        println!();
    }

    let ctx = gen_context_variant(&meta, 200, 1)?;
    println!("context variant:");
    for s in ctx.sentences.iter().take(3) {
        let line: Vec<String> = s.words.iter().zip(&s.tags).map(|(w, t)| format!("{w}/{t}")).collect();
        println!("{}", line.join(" "));
    }
    Ok(())
}
