//! In-memory versions of the command-line steps, for examples and tests
//! that do not want to touch the file system.

use crate::cli::{split_sizes, Variant};
use crate::data::{
    align_corpus, gen_context_variant, gen_synthetic, train_subword, AlignedExample, Lexicon, MetaFeatures, TagMap,
    TaggedSentence, Vocabulary,
};
use crate::error::Result;

/// A generated corpus split 80/10/10 with a tokenizer trained on the
/// training part.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Vec<TaggedSentence>,
    pub val: Vec<TaggedSentence>,
    pub test: Vec<TaggedSentence>,
    pub lexicon: Lexicon,
    pub vocab: Vocabulary,
    pub tags: TagMap,
}

impl Prepared {
    pub fn generate(meta: &MetaFeatures, variant: Variant, n: usize, seed: u64, vocab_size: usize) -> Result<Self> {
        let corpus = match variant {
            Variant::Stem => gen_synthetic(meta, n, seed)?,
            Variant::Context => gen_context_variant(meta, n, seed)?,
        };
        let (n_train, n_val, _) = split_sizes(corpus.sentences.len());
        let mut s = corpus.sentences;
        let test = s.split_off(n_train + n_val);
        let val = s.split_off(n_train);
        let vocab = train_subword(s.iter().flat_map(|x| x.words.iter().map(String::as_str)), vocab_size)?;
        Ok(Self {
            train: s,
            val,
            test,
            lexicon: corpus.lexicon,
            vocab,
            tags: TagMap::default(),
        })
    }

    pub fn align(&self, sentences: &[TaggedSentence], max_len: usize) -> Result<Vec<AlignedExample>> {
        align_corpus(sentences, &self.vocab, max_len, &self.tags)
    }
}
