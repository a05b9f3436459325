use super::{bio_violation, is_valid_tag, TaggedSentence};
use crate::error::{Error, Result};

/// Parses `word<TAB>tag` lines with blank lines between sentences.
pub fn parse_corpus(text: &str) -> Result<Vec<TaggedSentence>> {
    let mut corpus = Vec::new();
    let mut words = Vec::new();
    let mut tags = Vec::new();
    let mut first_line = 1;

    let mut flush = |words: &mut Vec<String>, tags: &mut Vec<String>, first_line: usize| -> Result<()> {
        if words.is_empty() {
            return Ok(());
        }
        if let Some(i) = bio_violation(tags) {
            return Err(Error::Tag {
                line: first_line + i,
                msg: format!("{} does not continue an entity of the same class", tags[i]),
            });
        }
        corpus.push(TaggedSentence::new(std::mem::take(words), std::mem::take(tags))?);
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut words, &mut tags, first_line)?;
            first_line = line_no + 1;
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 2 tab-separated columns, found {}", cols.len()),
            });
        }
        let (word, tag) = (cols[0].trim(), cols[1].trim());
        if word.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty word".into(),
            });
        }
        if !is_valid_tag(tag) {
            return Err(Error::Tag {
                line: line_no,
                msg: format!("unknown tag {tag:?}"),
            });
        }
        words.push(word.to_string());
        tags.push(tag.to_string());
    }
    flush(&mut words, &mut tags, first_line)?;
    Ok(corpus)
}

pub fn serialize_corpus(corpus: &[TaggedSentence]) -> String {
    let mut out = String::new();
    for s in corpus {
        for (w, t) in s.words.iter().zip(&s.tags) {
            out.push_str(w);
            out.push('\t');
            out.push_str(t);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
