//! Three-stage extraction over a shared encoding: entity names, then type
//! and attribute keys per entity, then one value per (entity, key) pair.

mod baseline;
mod bench;
mod efficiency;
mod train;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DocumentRecord, EntitySet, StructuredEntity};
use crate::model::{decode_rows, encode, greedy_decode, greedy_decode_batch, greedy_decode_from, DecodeConstraint, DecoderCache, EncoderOutput, ModelError, ModelParams};
use crate::scalar::Scalar;
use crate::schema::{CompiledSchema, ControlToken, ElementKind, SchemaError};
use crate::textproc::{build_vocab, VocabError, Vocabulary};

pub use baseline::{baseline_json_extract, json_target_tokens, json_to_entities, parse_json_output, render_json, BaselineOutput, JsonParse};
pub use bench::{bench_throughput, BenchReport, HardwareInfo, LatencySummary, System};
pub use efficiency::{stage2_token_efficiency, TokenEfficiency};
pub use train::{build_json_examples, to_batch, train, EpochLoss, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("document {doc_id}: {message}")]
    Validation { doc_id: String, message: String },
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss { epoch: usize, step: usize, detail: String },
    #[error("empty corpus")]
    EmptyCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    Names = 1,
    TypeAndKeys = 2,
    Values = 3,
    /// The monolithic JSON baseline's single target.
    Json = 4,
}

impl Stage {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Stage> {
        match i {
            1 => Some(Stage::Names),
            2 => Some(Stage::TypeAndKeys),
            3 => Some(Stage::Values),
            4 => Some(Stage::Json),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePrompt {
    pub stage: Stage,
    pub ids: Vec<u32>,
}

pub fn stage1_prompt(vocab: &Vocabulary) -> StagePrompt {
    StagePrompt {
        stage: Stage::Names,
        ids: vec![vocab.control_id(ControlToken::PredEntNames)],
    }
}

pub fn stage2_prompt(vocab: &Vocabulary, entity_name: &str) -> StagePrompt {
    let mut ids = vec![vocab.control_id(ControlToken::PredTypeAndAttr)];
    ids.extend(vocab.encode_text(entity_name));
    StagePrompt {
        stage: Stage::TypeAndKeys,
        ids,
    }
}

pub fn stage3_prompt(vocab: &Vocabulary, schema: &CompiledSchema, entity_name: &str, entity_type: &str, key: &str) -> Result<StagePrompt, PipelineError> {
    let mut ids = vec![vocab.control_id(ControlToken::PredVal)];
    ids.extend(vocab.encode_text(entity_name));
    for tok in [schema.type_token(entity_type)?, schema.key_token(key)?] {
        ids.push(vocab.id(tok).ok_or_else(|| SchemaError::UnknownToken(tok.to_string()))?);
    }
    Ok(StagePrompt { stage: Stage::Values, ids })
}

/// Vocabulary over document texts plus the words needed to spell schema
/// names and the baseline's JSON field names.
pub fn model_vocab(records: &[DocumentRecord], schema: &CompiledSchema, min_count: usize) -> Result<Vocabulary, PipelineError> {
    let mut extra: Vec<String> = schema.entity_types().iter().chain(schema.attribute_keys()).map(|e| e.name.clone()).collect();
    extra.push(baseline::FIELD_WORDS.join(" "));
    let extra = extra.join(" ");
    // schema words must survive any min_count
    let texts = records.iter().map(|r| r.text.as_str()).chain(std::iter::repeat_n(extra.as_str(), min_count));
    Ok(build_vocab(texts, schema, min_count)?)
}

/// Per-stage limits on generated tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeLimits {
    pub names: usize,
    pub type_and_keys: usize,
    pub value: usize,
    pub json: usize,
}

impl Default for DecodeLimits {
    fn default() -> Self {
        DecodeLimits {
            names: 64,
            type_and_keys: 16,
            value: 32,
            json: 384,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Batching {
    /// All prompts of a stage decoded as one batch.
    Parallel,
    /// One prompt at a time.
    Sequential,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub prompts: usize,
    pub prompt_tokens: usize,
    pub output_tokens: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractionTrace {
    pub encoder_calls: usize,
    pub source_tokens: usize,
    pub source_truncated: bool,
    pub stage1: StageTrace,
    pub stage2: StageTrace,
    pub stage3: StageTrace,
    /// Stage-2 output length per surviving entity.
    pub stage2_lengths: Vec<usize>,
    pub warnings: Vec<String>,
}

impl ExtractionTrace {
    pub fn output_tokens(&self) -> usize {
        self.stage1.output_tokens + self.stage2.output_tokens + self.stage3.output_tokens
    }
}

/// Splits a stage-1 output on ENT_SEP, dropping empty segments and
/// case-insensitive repeats.
pub fn split_names(vocab: &Vocabulary, ids: &[u32]) -> Vec<String> {
    let sep = vocab.control_id(ControlToken::EntSep);
    let mut out: Vec<String> = Vec::new();
    for seg in ids.split(|&t| t == sep) {
        let name = vocab.render_words(seg);
        if name.is_empty() || out.iter().any(|n| n.to_lowercase() == name.to_lowercase()) {
            continue;
        }
        out.push(name);
    }
    out
}

/// Runs the pipeline with one parameter set, vocabulary and schema.
pub struct Extractor<'a, T> {
    pub params: &'a ModelParams<T>,
    pub vocab: &'a Vocabulary,
    pub schema: &'a CompiledSchema,
    pub limits: DecodeLimits,
    type_first: DecodeConstraint,
}

impl<'a, T: Scalar> Extractor<'a, T> {
    pub fn new(params: &'a ModelParams<T>, vocab: &'a Vocabulary, schema: &'a CompiledSchema) -> Self {
        Extractor {
            params,
            vocab,
            schema,
            limits: DecodeLimits::default(),
            type_first: DecodeConstraint::first_token_must_be_type(vocab),
        }
    }

    pub fn with_limits(mut self, limits: DecodeLimits) -> Self {
        self.limits = limits;
        self
    }

    pub fn encode(&self, text: &str) -> EncoderOutput<T> {
        encode(self.params, &self.vocab.encode_text(text))
    }

    /// Stage 1: entity names with their raw output length.
    pub fn stage1_identify(&self, enc: &EncoderOutput<T>) -> (Vec<String>, usize) {
        let p = stage1_prompt(self.vocab);
        let out = greedy_decode(self.params, enc, &p.ids, &DecodeConstraint::Unrestricted, self.limits.names);
        (split_names(self.vocab, &out), out.len())
    }

    /// Maps a constrained stage-2 output to (type, keys). `None` when no type
    /// token was produced.
    pub fn interpret_stage2(&self, ids: &[u32]) -> Option<(String, Vec<String>)> {
        let mut etype = None;
        let mut keys: Vec<String> = Vec::new();
        for (i, &id) in ids.iter().enumerate() {
            let el = self.vocab.token(id).and_then(|t| self.schema.decode_token(t).ok())?;
            match el.kind {
                ElementKind::EntityType if i == 0 => etype = Some(el.name.clone()),
                ElementKind::AttributeKey if !keys.contains(&el.name) => keys.push(el.name.clone()),
                _ => {}
            }
        }
        etype.map(|t| (t, keys))
    }

    pub fn stage2_keys(&self, enc: &EncoderOutput<T>, entity_name: &str) -> Option<(String, Vec<String>)> {
        let p = stage2_prompt(self.vocab, entity_name);
        let out = greedy_decode(self.params, enc, &p.ids, &self.type_first, self.limits.type_and_keys);
        self.interpret_stage2(&out)
    }

    pub fn stage3_values(&self, enc: &EncoderOutput<T>, entity_name: &str, entity_type: &str, key: &str) -> Result<String, PipelineError> {
        let p = stage3_prompt(self.vocab, self.schema, entity_name, entity_type, key)?;
        let out = greedy_decode(self.params, enc, &p.ids, &DecodeConstraint::Unrestricted, self.limits.value);
        Ok(self.vocab.render_words(&out))
    }

    fn decode_stage(&self, enc: &EncoderOutput<T>, prompts: &[Vec<u32>], constraint: &DecodeConstraint, max_len: usize, batching: Batching) -> Vec<Vec<u32>> {
        match batching {
            Batching::Parallel => {
                let cs = vec![constraint; prompts.len()];
                greedy_decode_batch(self.params, enc, prompts, &cs, max_len)
            }
            Batching::Sequential => prompts.iter().map(|p| greedy_decode(self.params, enc, p, constraint, max_len)).collect(),
        }
    }

    /// Value prompts of one entity differ only in the final key token, so the
    /// common prefix is decoded once per entity and its cache forked per key.
    /// Kernels are batch invariant, so outputs match unshared decoding bit for bit.
    fn decode_values_shared(&self, enc: &EncoderOutput<T>, prompts: &[Vec<u32>], pairs: &[(usize, String)]) -> Vec<Vec<u32>> {
        let cap = self.params.config().max_tgt_len;
        let mut first: Vec<usize> = Vec::new();
        for (i, (ei, _)) in pairs.iter().enumerate() {
            if i == 0 || pairs[i - 1].0 != *ei {
                first.push(i);
            }
        }
        if prompts.iter().any(|p| p.len() < 2 || p.len() >= cap) {
            let cs = vec![&DecodeConstraint::Unrestricted; prompts.len()];
            return greedy_decode_batch(self.params, enc, prompts, &cs, self.limits.value);
        }
        let mut shared: Vec<DecoderCache<T>> = first.iter().map(|_| DecoderCache::new(self.params)).collect();
        {
            let mut refs: Vec<&mut DecoderCache<T>> = shared.iter_mut().collect();
            let toks: Vec<&[u32]> = first.iter().map(|&i| &prompts[i][..prompts[i].len() - 1]).collect();
            decode_rows(self.params, enc, &mut refs, &toks);
        }
        let mut caches = Vec::with_capacity(prompts.len());
        let mut group = 0;
        for i in 0..prompts.len() {
            if group + 1 < first.len() && first[group + 1] == i {
                group += 1;
            }
            caches.push(shared[group].clone());
        }
        let feeds: Vec<Vec<u32>> = prompts.iter().map(|p| vec![p[p.len() - 1]]).collect();
        let cs = vec![&DecodeConstraint::Unrestricted; prompts.len()];
        greedy_decode_from(self.params, enc, caches, feeds, &cs, self.limits.value)
    }

    /// Full extraction for one document. The encoder runs exactly once.
    pub fn extract(&self, text: &str, batching: Batching) -> Result<(EntitySet, ExtractionTrace), PipelineError> {
        let mut trace = ExtractionTrace::default();
        let src = self.vocab.encode_text(text);
        trace.source_tokens = src.len();
        let enc = encode(self.params, &src);
        trace.encoder_calls += 1;
        trace.source_truncated = enc.truncated();
        if enc.truncated() {
            trace.warnings.push(format!("source truncated to {} tokens", self.params.config().max_src_len));
        }

        // stage 1
        let t = Instant::now();
        let p1 = stage1_prompt(self.vocab);
        let out1 = self.decode_stage(&enc, std::slice::from_ref(&p1.ids), &DecodeConstraint::Unrestricted, self.limits.names, batching).remove(0);
        let names = split_names(self.vocab, &out1);
        trace.stage1 = StageTrace {
            prompts: 1,
            prompt_tokens: p1.ids.len(),
            output_tokens: out1.len(),
            wall_ms: t.elapsed().as_secs_f64() * 1e3,
        };
        for n in &names {
            if n.split(' ').any(|w| w == self.vocab.token(self.vocab.unk_id()).unwrap_or_default()) {
                trace.warnings.push(format!("entity name {n:?} contains out-of-vocabulary words"));
            }
        }
        if names.is_empty() {
            return Ok((EntitySet::versioned(Vec::new(), self.schema.version()), trace));
        }

        // stage 2
        let t = Instant::now();
        let prompts2: Vec<Vec<u32>> = names.iter().map(|n| stage2_prompt(self.vocab, n).ids).collect();
        let outs2 = self.decode_stage(&enc, &prompts2, &self.type_first, self.limits.type_and_keys, batching);
        let mut typed = Vec::new();
        for (name, out) in names.iter().zip(&outs2) {
            match self.interpret_stage2(out) {
                Some((ty, keys)) => {
                    trace.stage2_lengths.push(out.len());
                    typed.push((name.clone(), ty, keys));
                }
                None => trace.warnings.push(format!("entity {name:?} dropped: no type token decoded")),
            }
        }
        trace.stage2 = StageTrace {
            prompts: prompts2.len(),
            prompt_tokens: prompts2.iter().map(Vec::len).sum(),
            output_tokens: outs2.iter().map(Vec::len).sum(),
            wall_ms: t.elapsed().as_secs_f64() * 1e3,
        };

        // stage 3
        let t = Instant::now();
        let mut pairs = Vec::new();
        let mut prompts3 = Vec::new();
        for (ei, (name, ty, keys)) in typed.iter().enumerate() {
            for k in keys {
                prompts3.push(stage3_prompt(self.vocab, self.schema, name, ty, k)?.ids);
                pairs.push((ei, k.clone()));
            }
        }
        let outs3 = if prompts3.is_empty() {
            Vec::new()
        } else if batching == Batching::Parallel {
            self.decode_values_shared(&enc, &prompts3, &pairs)
        } else {
            self.decode_stage(&enc, &prompts3, &DecodeConstraint::Unrestricted, self.limits.value, batching)
        };
        trace.stage3 = StageTrace {
            prompts: prompts3.len(),
            prompt_tokens: prompts3.iter().map(Vec::len).sum(),
            output_tokens: outs3.iter().map(Vec::len).sum(),
            wall_ms: t.elapsed().as_secs_f64() * 1e3,
        };

        let mut entities: Vec<StructuredEntity> = typed.iter().map(|(n, ty, _)| StructuredEntity::new(n.clone(), ty.clone())).collect();
        for ((ei, key), out) in pairs.into_iter().zip(&outs3) {
            entities[ei].attributes.insert(key, self.vocab.render_words(out));
        }
        Ok((EntitySet::versioned(entities, self.schema.version()), trace))
    }
}

/// Extracts every record, spreading documents over `jobs` threads. Output
/// order follows input order.
pub fn extract_corpus<T: Scalar>(ex: &Extractor<'_, T>, records: &[DocumentRecord], batching: Batching, jobs: usize) -> Result<Vec<(EntitySet, ExtractionTrace)>, PipelineError> {
    let jobs = jobs.max(1).min(records.len().max(1));
    if jobs == 1 {
        return records.iter().map(|r| ex.extract(&r.text, batching)).collect();
    }
    let chunk = records.len().div_ceil(jobs);
    let parts: Vec<Result<Vec<_>, PipelineError>> = std::thread::scope(|s| {
        let handles: Vec<_> = records
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(|r| ex.extract(&r.text, batching)).collect::<Result<Vec<_>, _>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("extraction thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(records.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// One teacher-forced example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub stage: Stage,
    pub src_ids: Vec<u32>,
    pub prompt_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
}

/// Gold entity names ordered by first mention in `text`; names that never
/// occur keep their gold order after those that do.
pub fn mention_order<'e>(text: &str, entities: &'e [StructuredEntity]) -> Vec<&'e StructuredEntity> {
    let hay = crate::textproc::normalize_tokens(text);
    let find = |name: &str| {
        let needle = crate::textproc::normalize_tokens(name);
        if needle.is_empty() {
            return None;
        }
        hay.windows(needle.len()).position(|w| w == needle.as_slice())
    };
    let mut order: Vec<(usize, usize, &StructuredEntity)> = entities.iter().enumerate().map(|(i, e)| (find(&e.name).unwrap_or(usize::MAX), i, e)).collect();
    order.sort_by_key(|&(pos, i, _)| (pos, i));
    order.into_iter().map(|(_, _, e)| e).collect()
}

/// Teacher-forcing examples for one record: one stage-1 example, one
/// stage-2 example per gold entity, one stage-3 example per (entity, key).
pub fn build_training_examples(record: &DocumentRecord, schema: &CompiledSchema, vocab: &Vocabulary) -> Result<Vec<TrainingExample>, PipelineError> {
    let invalid = |message: String| PipelineError::Validation {
        doc_id: record.doc_id.clone(),
        message,
    };
    let src = vocab.encode_text(&record.text);
    if src.is_empty() {
        return Err(invalid("text has no tokens".into()));
    }
    let eos = vocab.eos_id();
    let sep = vocab.control_id(ControlToken::EntSep);
    let entities = mention_order(&record.text, record.gold());
    let mut out = Vec::new();

    let mut names = Vec::new();
    for (i, e) in entities.iter().enumerate() {
        if i > 0 {
            names.push(sep);
        }
        names.extend(vocab.encode_text(&e.name));
    }
    names.push(eos);
    out.push(TrainingExample {
        stage: Stage::Names,
        src_ids: src.clone(),
        prompt_ids: stage1_prompt(vocab).ids,
        target_ids: names,
    });

    let tok_id = |tok: &str| vocab.id(tok).ok_or_else(|| invalid(format!("token {tok} missing from vocabulary")));
    for e in &entities {
        let ty = schema.resolve_type(&e.entity_type).ok_or_else(|| invalid(format!("unknown entity type {:?}", e.entity_type)))?;
        let mut keys = Vec::new();
        for k in e.attributes.keys() {
            let idx = schema.key_index(k).ok_or_else(|| invalid(format!("unknown attribute key {k:?}")))?;
            keys.push(idx);
        }
        keys.sort_unstable();
        let mut target = vec![tok_id(&ty.token)?];
        for &k in &keys {
            target.push(tok_id(&schema.attribute_keys()[k].token)?);
        }
        target.push(eos);
        out.push(TrainingExample {
            stage: Stage::TypeAndKeys,
            src_ids: src.clone(),
            prompt_ids: stage2_prompt(vocab, &e.name).ids,
            target_ids: target,
        });
        for &k in &keys {
            let key = &schema.attribute_keys()[k];
            let value = e.attributes.iter().find(|(n, _)| schema.key_index(n) == Some(k)).map(|(_, v)| v.as_str()).unwrap_or("");
            let mut target = vocab.encode_text(value);
            target.push(eos);
            out.push(TrainingExample {
                stage: Stage::Values,
                src_ids: src.clone(),
                prompt_ids: stage3_prompt(vocab, schema, &e.name, &ty.name, &key.name)?.ids,
                target_ids: target,
            });
        }
    }
    Ok(out)
}
