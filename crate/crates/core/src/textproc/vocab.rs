use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::normalize_tokens;
use crate::schema::{CompiledSchema, ControlToken, KEY_PREFIX, TYPE_PREFIX};

pub const UNK_TOKEN: &str = "<unk>";

/// Punctuation tokens needed to spell JSON output with a word vocabulary.
pub const JSON_STRUCTURE_TOKENS: [&str; 7] = ["{", "}", "[", "]", ":", ",", "\""];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("min_count must be at least 1")]
    InvalidMinCount,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("operation requires a model-vocabulary tokenizer")]
    NotModelMode,
    #[error("malformed vocabulary file: {0}")]
    Malformed(String),
}

/// Word-level vocabulary with a contiguous reserved block of special tokens
/// at the start of the id space.
///
/// Reserved block layout: pad, unk, bos, eos, the three prompt markers, the
/// entity separator, JSON structure tokens, entity-type tokens, then
/// attribute-key tokens. Corpus words follow in descending frequency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    reserved: usize,
    type_ids: Range<u32>,
    key_ids: Range<u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    specials: SpecialsBlock,
}

#[derive(Serialize, Deserialize)]
struct SpecialsBlock {
    reserved: usize,
    pad: u32,
    unk: u32,
    bos: u32,
    eos: u32,
    entity_types: [u32; 2],
    attribute_keys: [u32; 2],
}

fn reserved_block(schema: &CompiledSchema) -> (Vec<String>, Range<u32>, Range<u32>) {
    let mut block: Vec<String> = vec![
        ControlToken::Pad.as_str().into(),
        UNK_TOKEN.into(),
        ControlToken::Bos.as_str().into(),
        ControlToken::Eos.as_str().into(),
        ControlToken::PredEntNames.as_str().into(),
        ControlToken::PredTypeAndAttr.as_str().into(),
        ControlToken::PredVal.as_str().into(),
        ControlToken::EntSep.as_str().into(),
    ];
    block.extend(JSON_STRUCTURE_TOKENS.iter().map(|s| s.to_string()));
    let t0 = block.len() as u32;
    block.extend(schema.entity_types().iter().map(|e| e.token.clone()));
    let k0 = block.len() as u32;
    block.extend(schema.attribute_keys().iter().map(|e| e.token.clone()));
    let k1 = block.len() as u32;
    (block, t0..k0, k0..k1)
}

/// Builds a vocabulary from `corpus`, keeping words seen at least
/// `min_count` times. All schema and control tokens are always present.
pub fn build_vocab<I, S>(corpus: I, schema: &CompiledSchema, min_count: usize) -> Result<Vocabulary, VocabError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if min_count == 0 {
        return Err(VocabError::InvalidMinCount);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut n_docs = 0usize;
    for text in corpus {
        n_docs += 1;
        for w in normalize_tokens(text.as_ref()) {
            *counts.entry(w).or_default() += 1;
        }
    }
    if n_docs == 0 {
        return Err(VocabError::EmptyCorpus);
    }
    let mut words: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let (mut tokens, type_ids, key_ids) = reserved_block(schema);
    let reserved = tokens.len();
    tokens.extend(words.into_iter().map(|(w, _)| w));
    Ok(Vocabulary::assemble(tokens, reserved, type_ids, key_ids))
}

impl Vocabulary {
    fn assemble(tokens: Vec<String>, reserved: usize, type_ids: Range<u32>, key_ids: Range<u32>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary {
            tokens,
            index,
            reserved,
            type_ids,
            key_ids,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad_id(&self) -> u32 {
        0
    }

    pub fn unk_id(&self) -> u32 {
        1
    }

    pub fn bos_id(&self) -> u32 {
        2
    }

    pub fn eos_id(&self) -> u32 {
        3
    }

    pub fn control_id(&self, c: ControlToken) -> u32 {
        self.index[c.as_str()]
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Number of ids in the reserved special block.
    pub fn reserved_len(&self) -> usize {
        self.reserved
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < self.reserved
    }

    pub fn type_ids(&self) -> Range<u32> {
        self.type_ids.clone()
    }

    pub fn key_ids(&self) -> Range<u32> {
        self.key_ids.clone()
    }

    /// True for entity-type and attribute-key tokens.
    pub fn is_schema_token(&self, id: u32) -> bool {
        self.type_ids.contains(&id) || self.key_ids.contains(&id)
    }

    pub fn is_json_structure(&self, id: u32) -> bool {
        self.token(id).is_some_and(|t| JSON_STRUCTURE_TOKENS.contains(&t))
    }

    /// Encodes free text: normalized words, out-of-vocabulary words as unk.
    pub fn encode_text(&self, text: &str) -> Vec<u32> {
        normalize_tokens(text)
            .iter()
            .map(|w| self.id(w).unwrap_or(self.unk_id()))
            .collect()
    }

    /// Encodes a pre-tokenized sequence. Registered special tokens map to
    /// their single id; anything else is normalized as text.
    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        let mut out = Vec::with_capacity(tokens.len());
        for t in tokens {
            let t = t.as_ref();
            match self.index.get(t) {
                Some(&id) if self.is_special(id) => out.push(id),
                _ => out.extend(self.encode_text(t)),
            }
        }
        out
    }

    /// Maps ids back to tokens, dropping padding.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>, VocabError> {
        ids.iter()
            .filter(|&&id| id != self.pad_id())
            .map(|&id| {
                self.token(id)
                    .map(str::to_string)
                    .ok_or(VocabError::IdOutOfRange { id, size: self.len() })
            })
            .collect()
    }

    /// Joins the word tokens of `ids` with single spaces, skipping every
    /// reserved token.
    pub fn render_words(&self, ids: &[u32]) -> String {
        let words: Vec<&str> = ids
            .iter()
            .filter(|&&id| !self.is_special(id) || id == self.unk_id())
            .filter_map(|&id| self.token(id))
            .collect();
        words.join(" ")
    }

    /// Content hash over the token list, used to pair checkpoints with the
    /// vocabulary they were trained on.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        format!("{:x}", h.finalize())
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            tokens: self.tokens.clone(),
            specials: SpecialsBlock {
                reserved: self.reserved,
                pad: self.pad_id(),
                unk: self.unk_id(),
                bos: self.bos_id(),
                eos: self.eos_id(),
                entity_types: [self.type_ids.start, self.type_ids.end],
                attribute_keys: [self.key_ids.start, self.key_ids.end],
            },
        };
        serde_json::to_string(&file).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, VocabError> {
        let file: VocabFile = serde_json::from_str(text).map_err(|e| VocabError::Malformed(e.to_string()))?;
        let s = &file.specials;
        let fixed = [
            (s.pad, ControlToken::Pad.as_str()),
            (s.unk, UNK_TOKEN),
            (s.bos, ControlToken::Bos.as_str()),
            (s.eos, ControlToken::Eos.as_str()),
        ];
        for (i, (id, tok)) in fixed.iter().enumerate() {
            if *id as usize != i || file.tokens.get(i).map(String::as_str) != Some(*tok) {
                return Err(VocabError::Malformed(format!("expected {tok} at id {i}")));
            }
        }
        let types = s.entity_types[0]..s.entity_types[1];
        let keys = s.attribute_keys[0]..s.attribute_keys[1];
        if s.reserved > file.tokens.len()
            || types.end != keys.start
            || keys.end as usize != s.reserved
            || !file.tokens[types.start as usize..types.end as usize].iter().all(|t| t.starts_with(TYPE_PREFIX))
            || !file.tokens[keys.start as usize..keys.end as usize].iter().all(|t| t.starts_with(KEY_PREFIX))
        {
            return Err(VocabError::Malformed("inconsistent specials block".into()));
        }
        let vocab = Vocabulary::assemble(file.tokens, s.reserved, types, keys);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(VocabError::Malformed("duplicate tokens".into()));
        }
        Ok(vocab)
    }
}

/// Tokenization front-end in one of two modes: the stateless normalizer the
/// metric uses, or the model vocabulary.
#[derive(Debug, Clone)]
pub enum Tokenizer {
    MetricNormalized,
    ModelVocab(Vocabulary),
}

impl Tokenizer {
    pub fn tokens(&self, text: &str) -> Vec<String> {
        normalize_tokens(text)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>, VocabError> {
        match self {
            Tokenizer::ModelVocab(v) => Ok(v.encode_text(text)),
            Tokenizer::MetricNormalized => Err(VocabError::NotModelMode),
        }
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>, VocabError> {
        match self {
            Tokenizer::ModelVocab(v) => v.decode(ids),
            Tokenizer::MetricNormalized => Err(VocabError::NotModelMode),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{compile_schema, SchemaDef};

    fn schema() -> CompiledSchema {
        compile_schema(&SchemaDef::sixgtech()).unwrap()
    }

    #[test]
    fn min_count_threshold() {
        let v = build_vocab(["a a b"], &schema(), 2).unwrap();
        assert!(v.id("a").is_some());
        assert!(v.id("b").is_none());
        assert_eq!(v.encode_text("b"), vec![v.unk_id()]);
    }

    #[test]
    fn schema_tokens_always_present() {
        let s = schema();
        let v = build_vocab(["x"], &s, 1).unwrap();
        for t in s.special_tokens() {
            let id = v.id(&t).unwrap();
            assert!(v.is_special(id));
        }
        let schema_ids = v.type_ids().chain(v.key_ids()).count();
        assert_eq!(schema_ids, s.entity_types().len() + s.attribute_keys().len());
        let ids: std::collections::HashSet<u32> = [v.pad_id(), v.unk_id(), v.bos_id(), v.eos_id()].into();
        assert_eq!(ids.len(), 4);
    }

    #[test]
    fn errors() {
        let s = schema();
        assert_eq!(build_vocab(Vec::<String>::new(), &s, 1).unwrap_err(), VocabError::EmptyCorpus);
        assert_eq!(build_vocab(["a"], &s, 0).unwrap_err(), VocabError::InvalidMinCount);
        let v = build_vocab(["a"], &s, 1).unwrap();
        assert!(matches!(v.decode(&[999]), Err(VocabError::IdOutOfRange { .. })));
        assert_eq!(Tokenizer::MetricNormalized.encode("a"), Err(VocabError::NotModelMode));
    }

    #[test]
    fn special_token_is_single_id() {
        let v = build_vocab(["semantic communication"], &schema(), 1).unwrap();
        let ids = v.encode_tokens(&["attr_benefits"]);
        assert_eq!(ids, vec![v.id("attr_benefits").unwrap()]);
        let tok = Tokenizer::ModelVocab(v.clone());
        let ids = tok.encode("semantic communication").unwrap();
        assert_eq!(tok.decode(&ids).unwrap(), vec!["semantic", "communication"]);
        assert!(v.decode(&[v.pad_id()]).unwrap().is_empty());
    }

    #[test]
    fn file_round_trip() {
        let v = build_vocab(["the quick brown fox", "the fox"], &schema(), 1).unwrap();
        let back = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
        assert_eq!(v.token(v.reserved_len() as u32), Some("fox"));
    }
}
