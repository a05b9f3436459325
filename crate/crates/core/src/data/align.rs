use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{TagMap, TaggedSentence, Vocabulary, PAD_ID};
use crate::error::{Error, Result};
use crate::model::{BatchInput, IGNORE_ID};

/// A sentence as subword ids with first-subword labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedExample {
    pub ids: Vec<u32>,
    /// Tag id on the first subword of each word, [`IGNORE_ID`] elsewhere.
    pub labels: Vec<i64>,
    /// Source word of each subword.
    pub word_index: Vec<usize>,
    /// Number of leading words that survived truncation.
    pub words_kept: usize,
}

impl AlignedExample {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Encodes every word and labels its first subword with the word's tag.
///
/// Words that would cross `max_len` are dropped whole, together with every
/// word after them. The one exception is a first word longer than `max_len`,
/// which keeps its leading subwords (and therefore its label).
pub fn align(sentence: &TaggedSentence, vocab: &Vocabulary, max_len: usize, tags: &TagMap) -> Result<AlignedExample> {
    let mut out = AlignedExample {
        ids: Vec::new(),
        labels: Vec::new(),
        word_index: Vec::new(),
        words_kept: 0,
    };
    for (w, (word, tag)) in sentence.words.iter().zip(&sentence.tags).enumerate() {
        let tag_id = tags
            .id(tag)
            .ok_or_else(|| Error::data(format!("tag {tag:?} not in the tag map")))?;
        let mut pieces = vocab.encode(word);
        if pieces.is_empty() {
            continue;
        }
        if out.ids.len() + pieces.len() > max_len {
            if out.ids.is_empty() && max_len > 0 {
                pieces.truncate(max_len);
            } else {
                break;
            }
        }
        for (i, id) in pieces.into_iter().enumerate() {
            out.ids.push(id);
            out.labels.push(if i == 0 { tag_id as i64 } else { IGNORE_ID });
            out.word_index.push(w);
        }
        out.words_kept = w + 1;
    }
    Ok(out)
}

/// [`align`] over a whole corpus.
pub fn align_corpus(
    sentences: &[TaggedSentence],
    vocab: &Vocabulary,
    max_len: usize,
    tags: &TagMap,
) -> Result<Vec<AlignedExample>> {
    sentences.iter().map(|s| align(s, vocab, max_len, tags)).collect()
}

/// Pads examples to the longest one (at least one position).
pub fn collate(examples: &[&AlignedExample]) -> Result<BatchInput> {
    let batch = examples.len();
    let time = examples.iter().map(|e| e.len()).max().unwrap_or(0).max(1);
    let mut ids = vec![PAD_ID as usize; batch * time];
    let mut mask = vec![0.0; batch * time];
    let mut labels = vec![IGNORE_ID; batch * time];
    for (b, ex) in examples.iter().enumerate() {
        for (t, (&id, &label)) in ex.ids.iter().zip(&ex.labels).enumerate() {
            ids[b * time + t] = id as usize;
            mask[b * time + t] = 1.0;
            labels[b * time + t] = label;
        }
    }
    BatchInput::new(batch, time, ids, mask, labels)
}

/// Splits `examples` into padded batches, shuffled when `rng` is given.
pub fn batches(examples: &[AlignedExample], batch_size: usize, rng: Option<&mut ChaCha8Rng>) -> Result<Vec<BatchInput>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if let Some(rng) = rng {
        order.shuffle(rng);
    }
    order
        .chunks(batch_size)
        .map(|chunk| collate(&chunk.iter().map(|&i| &examples[i]).collect::<Vec<_>>()))
        .collect()
}
