//! Text normalization and the model vocabulary.

mod pieces;
mod vocab;

use std::collections::BTreeSet;

use unicode_normalization::UnicodeNormalization;

pub use pieces::PieceSplitter;
pub use vocab::{build_vocab, Tokenizer, VocabError, Vocabulary, JSON_STRUCTURE_TOKENS, UNK_TOKEN};

/// NFC-normalizes and lowercases `text`, then splits it into maximal runs of
/// alphanumeric characters. Whitespace, punctuation and symbols separate
/// tokens and are dropped; duplicates and order are kept.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let nfc: String = text.nfc().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in nfc.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// The token set compared by the Jaccard property similarity.
pub fn normalize_token_set(text: &str) -> BTreeSet<String> {
    normalize_tokens(text).into_iter().collect()
}
