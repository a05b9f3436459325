//! Corpus handling: tagged sentences, normalization, subword vocabularies,
//! label alignment and the synthetic corpus generator.

mod align;
mod bpe;
mod conll;
mod normalize;
mod synth;

pub use align::{align, align_corpus, batches, collate, AlignedExample};
pub use bpe::{train_subword, train_subword_traced, Vocabulary, PAD_ID, UNK_ID};
pub use conll::{parse_corpus, serialize_corpus};
pub use normalize::{normalize, Profile};
pub use synth::{
    gen_context_variant, gen_synthetic, lexicon_tagger, synthetic_alphabet, Lexicon, MetaFeatures,
    SyntheticCorpus,
};

use crate::error::{Error, Result};

/// Entity classes of the tag set.
pub const ENTITY_CLASSES: [&str; 3] = ["LOC", "ORG", "PER"];

/// A sentence with one BIO tag per word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSentence {
    pub words: Vec<String>,
    pub tags: Vec<String>,
}

impl TaggedSentence {
    pub fn new(words: Vec<String>, tags: Vec<String>) -> Result<Self> {
        if words.len() != tags.len() {
            return Err(Error::data(format!(
                "{} words but {} tags",
                words.len(),
                tags.len()
            )));
        }
        Ok(Self { words, tags })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Checks that `tag` belongs to the tag set.
pub fn is_valid_tag(tag: &str) -> bool {
    tag == "O"
        || tag
            .strip_prefix("B-")
            .or_else(|| tag.strip_prefix("I-"))
            .is_some_and(|c| ENTITY_CLASSES.contains(&c))
}

/// Index of the first tag that breaks BIO continuity (`I-X` not preceded by
/// `B-X` or `I-X`), if any.
pub fn bio_violation(tags: &[String]) -> Option<usize> {
    let mut prev: Option<&str> = None;
    for (i, tag) in tags.iter().enumerate() {
        if let Some(class) = tag.strip_prefix("I-") {
            let ok = prev.is_some_and(|p| p.strip_prefix("B-").or_else(|| p.strip_prefix("I-")) == Some(class));
            if !ok {
                return Some(i);
            }
        }
        prev = Some(tag);
    }
    None
}

/// Bidirectional tag ↔ id map. Ids follow lexicographic tag order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagMap {
    tags: Vec<String>,
}

impl Default for TagMap {
    fn default() -> Self {
        let mut tags: Vec<String> = ENTITY_CLASSES
            .iter()
            .flat_map(|c| [format!("B-{c}"), format!("I-{c}")])
            .chain(std::iter::once("O".to_string()))
            .collect();
        tags.sort();
        Self { tags }
    }
}

impl TagMap {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn id(&self, tag: &str) -> Option<usize> {
        self.tags.binary_search_by(|t| t.as_str().cmp(tag)).ok()
    }

    pub fn tag(&self, id: usize) -> Option<&str> {
        self.tags.get(id).map(String::as_str)
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }
}
