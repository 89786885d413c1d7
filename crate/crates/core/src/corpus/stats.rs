use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::DocumentRecord;
use crate::textproc::normalize_tokens;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub sentences: usize,
    pub words: usize,
    pub entities: usize,
    pub attribute_keys: BTreeMap<String, usize>,
}

/// Splits on `.`, `?` or `!` when followed by whitespace or end of text.
pub(crate) fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '?' | '!') {
            let at_boundary = match chars.peek() {
                None => true,
                Some((_, n)) => n.is_whitespace(),
            };
            if at_boundary {
                out.push(&text[start..i + c.len_utf8()]);
                start = i + c.len_utf8();
            }
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out.retain(|s| !normalize_tokens(s).is_empty());
    out
}

/// Counts documents, sentences, words (normalized tokens, duplicates kept),
/// entities, and how often each attribute key is filled.
pub fn stats(records: &[DocumentRecord]) -> CorpusStats {
    let mut st = CorpusStats {
        documents: records.len(),
        ..Default::default()
    };
    for r in records {
        for s in sentences(&r.text) {
            st.sentences += 1;
            st.words += normalize_tokens(s).len();
        }
        for e in r.gold() {
            st.entities += 1;
            for k in e.attributes.keys() {
                *st.attribute_keys.entry(k.clone()).or_default() += 1;
            }
        }
    }
    st
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_rule() {
        assert_eq!(sentences("A b. C d? E!"), vec!["A b.", " C d?", " E!"]);
        assert_eq!(sentences("Runs at 5.5 GHz. Done").len(), 2);
        assert_eq!(sentences("..."), Vec::<&str>::new());
        assert!(sentences("").is_empty());
    }

    #[test]
    fn empty_corpus_is_zero() {
        assert_eq!(stats(&[]), CorpusStats::default());
    }

    #[test]
    fn counts_words_with_duplicates() {
        let r = DocumentRecord {
            doc_id: "a".into(),
            text: "The the cat. A 5G/LTE link!".into(),
            entities: None,
        };
        let s = stats(&[r]);
        assert_eq!((s.documents, s.sentences, s.words, s.entities), (1, 2, 7, 0));
    }
}
