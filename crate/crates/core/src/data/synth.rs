//! Synthetic morphology-rich corpora.
//!
//! Words are a stem followed by a chain of suffixes over a synthetic script.
//! Entity stems are disjoint per class, so the class of an entity word is
//! recoverable from its stem: the returned [`Lexicon`] is the ground truth.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{TaggedSentence, ENTITY_CLASSES};
use crate::error::{Error, Result};
use crate::rng::component_rng;

const ENTITY_STEMS_PER_CLASS: usize = 40;
const OTHER_STEMS: usize = 150;
const SUFFIXES: usize = 12;
const SENTENCE_WORDS: (usize, usize) = (6, 14);
const MAX_SCRIPT: usize = 26 + 32 + 2000;

/// Language descriptors that parameterize the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaFeatures {
    /// Alphabet cardinality.
    pub script_size: usize,
    pub avg_suffixes_per_word: f64,
    pub stem_length_range: (usize, usize),
    /// Probability that a word position opens an entity.
    pub entity_density: f64,
    /// Maximum suffix chain length.
    pub agglutination_depth: usize,
}

impl Default for MetaFeatures {
    fn default() -> Self {
        Self {
            script_size: 40,
            avg_suffixes_per_word: 1.2,
            stem_length_range: (3, 6),
            entity_density: 0.15,
            agglutination_depth: 3,
        }
    }
}

impl MetaFeatures {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.stem_length_range;
        if !(6..=MAX_SCRIPT).contains(&self.script_size) {
            return Err(Error::config(format!(
                "script_size {} outside [6, {MAX_SCRIPT}]",
                self.script_size
            )));
        }
        if lo == 0 || lo > hi {
            return Err(Error::config(format!("stem_length_range ({lo}, {hi}) is not a valid range")));
        }
        if !(0.0..1.0).contains(&self.entity_density) {
            return Err(Error::config(format!("entity_density {} outside [0, 1)", self.entity_density)));
        }
        if !(self.avg_suffixes_per_word >= 0.0 && self.avg_suffixes_per_word <= self.agglutination_depth as f64) {
            return Err(Error::config(format!(
                "avg_suffixes_per_word {} must lie in [0, agglutination_depth = {}]",
                self.avg_suffixes_per_word, self.agglutination_depth
            )));
        }
        Ok(())
    }
}

/// The first `n` symbols of the synthetic script: Latin lowercase, then
/// Cyrillic lowercase, then CJK ideographs.
pub fn synthetic_alphabet(n: usize) -> Vec<char> {
    ('a'..='z')
        .chain('\u{0430}'..='\u{044F}')
        .chain('\u{4E00}'..='\u{9FFF}')
        .take(n)
        .collect()
}

/// Stem → class ("PER", "ORG", "LOC" or "O").
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Lexicon {
    pub stems: BTreeMap<String, String>,
}

impl Lexicon {
    /// Class of the stem that prefixes `word`. Stems are prefix-free, so at
    /// most one matches.
    pub fn class_of(&self, word: &str) -> Option<&str> {
        word.char_indices()
            .map(|(i, c)| &word[..i + c.len_utf8()])
            .find_map(|prefix| self.stems.get(prefix))
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub sentences: Vec<TaggedSentence>,
    pub lexicon: Lexicon,
}

/// Tags words by stem lookup. Adjacent entity words of one class form one
/// span, which matches the generator's guarantee that spans never touch.
pub fn lexicon_tagger(lexicon: &Lexicon, words: &[String]) -> Vec<String> {
    let mut prev: Option<&str> = None;
    words
        .iter()
        .map(|w| {
            let class = lexicon.class_of(w).filter(|&c| c != "O");
            let tag = match class {
                None => "O".to_string(),
                Some(c) if prev == Some(c) => format!("I-{c}"),
                Some(c) => format!("B-{c}"),
            };
            prev = class;
            tag
        })
        .collect()
}

/// Draws `count` distinct strings over `symbols` that are prefix-free with
/// respect to each other and to everything already in `taken`.
fn draw_stems(
    rng: &mut ChaCha8Rng,
    symbols: &[char],
    (lo, hi): (usize, usize),
    count: usize,
    taken: &mut BTreeSet<String>,
) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 200 * count + 1000 {
            return Err(Error::config(format!(
                "cannot draw {count} distinct stems of length {lo}..={hi} over {} symbols",
                symbols.len()
            )));
        }
        let len = rng.random_range(lo..=hi);
        let stem: String = (0..len).map(|_| symbols[rng.random_range(0..symbols.len())]).collect();
        let clashes = taken
            .iter()
            .any(|t| t.starts_with(stem.as_str()) || stem.starts_with(t.as_str()));
        if !clashes {
            taken.insert(stem.clone());
            out.push(stem);
        }
    }
    Ok(out)
}

struct Morphology {
    suffixes: Vec<String>,
    poisson: Option<Poisson<f64>>,
    depth: usize,
}

impl Morphology {
    fn new(meta: &MetaFeatures, symbols: &[char], rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut suffixes = Vec::new();
        let mut attempts = 0;
        while suffixes.len() < SUFFIXES && attempts < 10_000 {
            attempts += 1;
            let len = rng.random_range(1..=2);
            let s: String = (0..len).map(|_| symbols[rng.random_range(0..symbols.len())]).collect();
            if seen.insert(s.clone()) {
                suffixes.push(s);
            }
        }
        let poisson = if meta.avg_suffixes_per_word > 0.0 && meta.agglutination_depth > 0 {
            Some(Poisson::new(meta.avg_suffixes_per_word).map_err(|e| Error::config(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            suffixes,
            poisson,
            depth: meta.agglutination_depth,
        })
    }

    fn inflect(&self, stem: &str, rng: &mut ChaCha8Rng) -> String {
        let n = match &self.poisson {
            Some(p) => (p.sample(rng) as usize).min(self.depth),
            None => 0,
        };
        let mut word = stem.to_string();
        for _ in 0..n {
            word.push_str(&self.suffixes[rng.random_range(0..self.suffixes.len())]);
        }
        word
    }
}

fn max_span(class: &str) -> usize {
    if class == "ORG" {
        3
    } else {
        2
    }
}

/// Generates `n` sentences whose entity classes follow from stem identity.
pub fn gen_synthetic(meta: &MetaFeatures, n: usize, seed: u64) -> Result<SyntheticCorpus> {
    meta.validate()?;
    if n == 0 {
        return Err(Error::config("need at least one sentence"));
    }
    let mut rng = component_rng(seed, "synthetic");
    let symbols = synthetic_alphabet(meta.script_size);
    let mut taken = BTreeSet::new();
    let mut lexicon = Lexicon::default();
    let mut class_stems: Vec<Vec<String>> = Vec::new();
    for class in ENTITY_CLASSES {
        let stems = draw_stems(&mut rng, &symbols, meta.stem_length_range, ENTITY_STEMS_PER_CLASS, &mut taken)?;
        for s in &stems {
            lexicon.stems.insert(s.clone(), class.to_string());
        }
        class_stems.push(stems);
    }
    let other = draw_stems(&mut rng, &symbols, meta.stem_length_range, OTHER_STEMS, &mut taken)?;
    for s in &other {
        lexicon.stems.insert(s.clone(), "O".to_string());
    }
    let morph = Morphology::new(meta, &symbols, &mut rng)?;

    let mut sentences = Vec::with_capacity(n);
    for _ in 0..n {
        let len = rng.random_range(SENTENCE_WORDS.0..=SENTENCE_WORDS.1);
        let mut words = Vec::with_capacity(len + 2);
        let mut tags = Vec::with_capacity(len + 2);
        let mut after_entity = false;
        while words.len() < len {
            if !after_entity && rng.random::<f64>() < meta.entity_density {
                let ci = rng.random_range(0..ENTITY_CLASSES.len());
                let class = ENTITY_CLASSES[ci];
                let span = rng.random_range(1..=max_span(class));
                for i in 0..span {
                    let stem = &class_stems[ci][rng.random_range(0..ENTITY_STEMS_PER_CLASS)];
                    words.push(morph.inflect(stem, &mut rng));
                    tags.push(format!("{}-{class}", if i == 0 { "B" } else { "I" }));
                }
                after_entity = true;
            } else {
                let stem = &other[rng.random_range(0..other.len())];
                words.push(morph.inflect(stem, &mut rng));
                tags.push("O".to_string());
                after_entity = false;
            }
        }
        sentences.push(TaggedSentence::new(words, tags)?);
    }
    Ok(SyntheticCorpus { sentences, lexicon })
}

/// A variant where entity class is carried only by context: entity words
/// share one class-ambiguous stem pool, and each entity is announced by a
/// class-specific trigger word two positions earlier (`trigger filler
/// entity`). Triggers and fillers are single-symbol words reserved from the
/// script, so the dependency spans three subword positions.
pub fn gen_context_variant(meta: &MetaFeatures, n: usize, seed: u64) -> Result<SyntheticCorpus> {
    meta.validate()?;
    if n == 0 {
        return Err(Error::config("need at least one sentence"));
    }
    let mut rng = component_rng(seed, "synthetic-context");
    let all = synthetic_alphabet(meta.script_size);
    let (reserved, symbols) = all.split_at(5);
    let triggers: Vec<String> = reserved[..3].iter().map(char::to_string).collect();
    let fillers: Vec<String> = reserved[3..].iter().map(char::to_string).collect();

    let mut taken = BTreeSet::new();
    let mut lexicon = Lexicon::default();
    let entity_stems = draw_stems(&mut rng, symbols, meta.stem_length_range, ENTITY_STEMS_PER_CLASS, &mut taken)?;
    let other = draw_stems(&mut rng, symbols, meta.stem_length_range, OTHER_STEMS, &mut taken)?;
    for s in &other {
        lexicon.stems.insert(s.clone(), "O".to_string());
    }
    for (t, class) in triggers.iter().zip(ENTITY_CLASSES) {
        lexicon.stems.insert(t.clone(), format!("trigger:{class}"));
    }
    for s in &entity_stems {
        lexicon.stems.insert(s.clone(), "ambiguous".to_string());
    }
    let morph = Morphology::new(meta, symbols, &mut rng)?;

    let mut sentences = Vec::with_capacity(n);
    for _ in 0..n {
        let len = rng.random_range(SENTENCE_WORDS.0..=SENTENCE_WORDS.1);
        let mut words = Vec::with_capacity(len + 3);
        let mut tags = Vec::with_capacity(len + 3);
        while words.len() < len {
            if rng.random::<f64>() < meta.entity_density {
                let ci = rng.random_range(0..ENTITY_CLASSES.len());
                let stem = &entity_stems[rng.random_range(0..entity_stems.len())];
                words.push(triggers[ci].clone());
                tags.push("O".to_string());
                words.push(fillers[rng.random_range(0..fillers.len())].clone());
                tags.push("O".to_string());
                words.push(morph.inflect(stem, &mut rng));
                tags.push(format!("B-{}", ENTITY_CLASSES[ci]));
            } else {
                let stem = &other[rng.random_range(0..other.len())];
                words.push(morph.inflect(stem, &mut rng));
                tags.push("O".to_string());
            }
        }
        sentences.push(TaggedSentence::new(words, tags)?);
    }
    Ok(SyntheticCorpus { sentences, lexicon })
}
