//! Deterministic byte-pair merge learning over characters.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
const PAD: &str = "<pad>";
const UNK: &str = "<unk>";

/// Subword inventory plus the ordered merges that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    /// (left id, right id) → (rank, merged id)
    ranks: HashMap<(u32, u32), (usize, u32)>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    version: u32,
    pad_id: u32,
    unk_id: u32,
    vocab: BTreeMap<String, u32>,
    merges: Vec<(String, String)>,
}

impl Vocabulary {
    fn from_parts(tokens: Vec<String>, merges: Vec<(String, String)>) -> Result<Self> {
        let index: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        if index.len() != tokens.len() {
            return Err(Error::Format("duplicate token in vocabulary".into()));
        }
        let mut ranks = HashMap::new();
        for (rank, (a, b)) in merges.iter().enumerate() {
            let lookup = |s: &str| {
                index
                    .get(s)
                    .copied()
                    .ok_or_else(|| Error::Format(format!("merge refers to unknown token {s:?}")))
            };
            let key = (lookup(a)?, lookup(b)?);
            let merged = lookup(&format!("{a}{b}"))?;
            ranks.entry(key).or_insert((rank, merged));
        }
        Ok(Self {
            tokens,
            index,
            merges,
            ranks,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Splits one word into subword ids. Characters outside the training
    /// alphabet become [`UNK_ID`].
    pub fn encode(&self, word: &str) -> Vec<u32> {
        let mut ids: Vec<u32> = word
            .chars()
            .map(|c| {
                let mut buf = [0u8; 4];
                self.id(c.encode_utf8(&mut buf)).unwrap_or(UNK_ID)
            })
            .collect();
        loop {
            let best = ids
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&(r, m)| (r, w[0], w[1], m)))
                .min();
            let Some((_, a, b, merged)) = best else { break };
            let mut out = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && ids[i] == a && ids[i + 1] == b {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(ids[i]);
                    i += 1;
                }
            }
            ids = out;
        }
        ids
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().map(|&i| self.token(i).unwrap_or(UNK)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabularyFile {
            version: 1,
            pad_id: PAD_ID,
            unk_id: UNK_ID,
            vocab: self.index.iter().map(|(k, &v)| (k.clone(), v)).collect(),
            merges: self.merges.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabularyFile = serde_json::from_str(text)?;
        if file.version != 1 || file.pad_id != PAD_ID || file.unk_id != UNK_ID {
            return Err(Error::Format("unsupported vocabulary header".into()));
        }
        let mut tokens = vec![None; file.vocab.len()];
        for (tok, id) in file.vocab {
            let slot = tokens
                .get_mut(id as usize)
                .ok_or_else(|| Error::Format(format!("vocabulary id {id} is not dense")))?;
            *slot = Some(tok);
        }
        let tokens = tokens
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Format("vocabulary ids are not dense".into()))?;
        Self::from_parts(tokens, file.merges)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_text(path, &self.to_json()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&crate::io::read_text(path)?)
    }
}

/// Learns merges until `vocab_size` subword symbols exist (specials not
/// counted) or no adjacent pair occurs at least twice. The most frequent pair
/// wins; ties go to the lexicographically smallest `(left, right)`.
pub fn train_subword<'a>(words: impl IntoIterator<Item = &'a str>, vocab_size: usize) -> Result<Vocabulary> {
    train_subword_traced(words, vocab_size).map(|(v, _)| v)
}

/// Like [`train_subword`], also returning the corpus frequency of each merge
/// at the moment it was chosen.
pub fn train_subword_traced<'a>(
    words: impl IntoIterator<Item = &'a str>,
    vocab_size: usize,
) -> Result<(Vocabulary, Vec<u64>)> {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for w in words {
        *counts.entry(w).or_default() += 1;
    }
    let alphabet: BTreeSet<char> = counts.keys().flat_map(|w| w.chars()).collect();
    if vocab_size <= alphabet.len() {
        return Err(Error::config(format!(
            "vocab_size {vocab_size} must exceed the alphabet size {}",
            alphabet.len()
        )));
    }
    let mut tokens: Vec<String> = vec![PAD.into(), UNK.into()];
    tokens.extend(alphabet.iter().map(char::to_string));
    let mut index: HashMap<String, u32> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    let mut corpus: Vec<(Vec<u32>, u64)> = counts
        .iter()
        .map(|(w, &n)| (w.chars().map(|c| index[&c.to_string()]).collect(), n))
        .collect();

    let mut merges = Vec::new();
    let mut trace = Vec::new();
    while tokens.len() - 2 < vocab_size {
        let mut pairs: HashMap<(u32, u32), u64> = HashMap::new();
        for (syms, n) in &corpus {
            for w in syms.windows(2) {
                *pairs.entry((w[0], w[1])).or_default() += n;
            }
        }
        let best = pairs.iter().max_by(|(pa, fa), (pb, fb)| {
            fa.cmp(fb).then_with(|| {
                let ka = (&tokens[pa.0 as usize], &tokens[pa.1 as usize]);
                let kb = (&tokens[pb.0 as usize], &tokens[pb.1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some((&(a, b), &freq)) = best else { break };
        if freq < 2 {
            break;
        }
        let merged_str = format!("{}{}", tokens[a as usize], tokens[b as usize]);
        let merged = match index.get(&merged_str) {
            Some(&id) => id,
            None => {
                let id = tokens.len() as u32;
                tokens.push(merged_str.clone());
                index.insert(merged_str, id);
                id
            }
        };
        for (syms, _) in &mut corpus {
            let mut i = 0;
            let mut out = Vec::with_capacity(syms.len());
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            *syms = out;
        }
        merges.push((tokens[a as usize].clone(), tokens[b as usize].clone()));
        trace.push(freq);
    }
    Ok((Vocabulary::from_parts(tokens, merges)?, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_candidate_pair_is_merged_first() {
        let words = vec!["aaaa"; 100];
        let v = train_subword(words.iter().copied(), 2).unwrap();
        assert_eq!(v.merges()[0], ("a".to_string(), "a".to_string()));
        assert_eq!(v.merges().len(), 1);
    }

    #[test]
    fn vocab_size_must_exceed_alphabet() {
        let err = train_subword(["abc"], 3).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn ties_break_lexicographically() {
        // "ab" and "cd" both occur twice; 4 symbols + 2 merges
        let v = train_subword(["cd", "ab", "cd", "ab"], 6).unwrap();
        assert_eq!(v.merges()[0], ("a".into(), "b".into()));
        assert_eq!(v.merges()[1], ("c".into(), "d".into()));
    }

    #[test]
    fn stops_when_no_pair_repeats() {
        let v = train_subword(["abc"], 50).unwrap();
        assert!(v.merges().is_empty());
    }

    #[test]
    fn encode_decode_and_unknowns() {
        let words = ["lower", "lowest", "newer", "wider", "low", "low"];
        let v = train_subword(words.iter().copied(), 30).unwrap();
        for w in words {
            assert_eq!(v.decode(&v.encode(w)), w);
        }
        let ids = v.encode("lo$");
        assert_eq!(*ids.last().unwrap(), UNK_ID);
    }

    #[test]
    fn json_round_trip() {
        let v = train_subword(["banana", "bandana", "ban"], 12).unwrap();
        let back = Vocabulary::from_json(&v.to_json().unwrap()).unwrap();
        assert_eq!(back, v);
    }
}
