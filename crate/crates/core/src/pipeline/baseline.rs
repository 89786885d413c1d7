//! Monolithic baseline: one unconstrained decode of a JSON list holding
//! every entity, parsed leniently.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{EntitySet, StructuredEntity};
use crate::model::{encode, greedy_decode, DecodeConstraint, ModelParams};
use crate::scalar::Scalar;
use crate::schema::CompiledSchema;
use crate::textproc::Vocabulary;

pub(crate) const FIELD_WORDS: [&str; 3] = ["name", "type", "attributes"];

fn quoted(out: &mut Vec<String>, s: &str) {
    out.push("\"".into());
    if !s.is_empty() {
        out.push(s.to_string());
    }
    out.push("\"".into());
}

/// Token sequence spelling `[{"name": .., "type": .., "attributes": {..}}, ..]`.
/// Punctuation tokens are separate items; text runs are single items that
/// the vocabulary splits into words.
pub fn json_target_tokens(entities: &[StructuredEntity]) -> Vec<String> {
    let mut out = vec!["[".to_string()];
    for (i, e) in entities.iter().enumerate() {
        if i > 0 {
            out.push(",".into());
        }
        out.push("{".into());
        quoted(&mut out, "name");
        out.push(":".into());
        quoted(&mut out, &e.name);
        out.push(",".into());
        quoted(&mut out, "type");
        out.push(":".into());
        quoted(&mut out, &e.entity_type);
        out.push(",".into());
        quoted(&mut out, "attributes");
        out.push(":".into());
        out.push("{".into());
        for (j, (k, v)) in e.attributes.iter().enumerate() {
            if j > 0 {
                out.push(",".into());
            }
            quoted(&mut out, k);
            out.push(":".into());
            quoted(&mut out, v);
        }
        out.push("}".into());
        out.push("}".into());
    }
    out.push("]".into());
    out
}

/// Renders decoded ids as JSON text: structure tokens verbatim, words
/// separated by single spaces.
pub fn render_json(vocab: &Vocabulary, ids: &[u32]) -> String {
    let mut s = String::new();
    let mut prev_word = false;
    for &id in ids {
        let Some(tok) = vocab.token(id) else { continue };
        if vocab.is_json_structure(id) {
            s.push_str(tok);
            prev_word = false;
        } else if !vocab.is_special(id) || id == vocab.unk_id() {
            if prev_word {
                s.push(' ');
            }
            s.push_str(tok);
            prev_word = true;
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct JsonParse {
    pub value: Option<Value>,
    pub repaired: bool,
}

/// Closes an open string, drops a dangling separator, fills a missing value
/// and closes open brackets.
fn close(prefix: &str) -> String {
    let mut stack = Vec::new();
    let mut in_str = false;
    let mut esc = false;
    for c in prefix.chars() {
        if in_str {
            match (esc, c) {
                (true, _) => esc = false,
                (false, '\\') => esc = true,
                (false, '"') => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' | '[' => stack.push(c),
            '}' | ']' => {
                stack.pop();
            }
            _ => {}
        }
    }
    let mut s = prefix.to_string();
    if in_str {
        s.push('"');
    }
    let trimmed = s.trim_end().trim_end_matches(',').trim_end().len();
    s.truncate(trimmed);
    if s.ends_with(':') {
        s.push_str("null");
    } else if stack.last() == Some(&'{') && s.ends_with('"') {
        // a key without its value: `{"a":"b","c"`
        let body = &s[..s.len() - 1];
        if let Some(open) = body.rfind('"') {
            let before = body[..open].trim_end();
            if before.ends_with(',') || before.ends_with('{') {
                s.push_str(":null");
            }
        }
    }
    for c in stack.iter().rev() {
        s.push(if *c == '{' { '}' } else { ']' });
    }
    s
}

/// Strict parse, then repair of the longest recoverable prefix.
pub fn parse_json_output(text: &str) -> JsonParse {
    if let Ok(v) = serde_json::from_str::<Value>(text) {
        return JsonParse { value: Some(v), repaired: false };
    }
    let mut cuts: Vec<usize> = vec![text.len()];
    for (i, c) in text.char_indices().rev() {
        if matches!(c, '}' | ']' | '"') {
            cuts.push(i + 1);
        } else if c == ',' {
            cuts.push(i);
        }
    }
    for cut in cuts {
        let candidate = close(&text[..cut]);
        if let Ok(v) = serde_json::from_str::<Value>(&candidate) {
            if !candidate.trim().is_empty() {
                return JsonParse { value: Some(v), repaired: true };
            }
        }
    }
    JsonParse { value: None, repaired: false }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutput {
    pub entities: EntitySet,
    pub text: String,
    pub output_tokens: usize,
    pub repaired: bool,
    /// Nothing parseable was produced; `entities` is empty.
    pub unparseable: bool,
    /// Entities or attributes discarded for unknown types or keys.
    pub dropped: usize,
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// Maps a parsed JSON value onto schema-aligned entities.
pub fn json_to_entities(v: &Value, schema: &CompiledSchema) -> (Vec<StructuredEntity>, usize) {
    let items: Vec<&Value> = match v {
        Value::Array(a) => a.iter().collect(),
        Value::Object(_) => vec![v],
        _ => Vec::new(),
    };
    let mut dropped = 0;
    let mut out = Vec::new();
    for it in items {
        let Some(obj) = it.as_object() else {
            dropped += 1;
            continue;
        };
        let name = obj.get("name").map(value_text).unwrap_or_default();
        let ty = obj.get("type").map(value_text).and_then(|t| schema.resolve_type(&t).map(|e| e.name.clone()));
        let (true, Some(ty)) = (!name.trim().is_empty(), ty) else {
            dropped += 1;
            continue;
        };
        let mut e = StructuredEntity::new(name, ty);
        if let Some(Value::Object(attrs)) = obj.get("attributes") {
            for (k, val) in attrs {
                match schema.resolve_key(k) {
                    Some(key) => {
                        e.attributes.entry(key.name.clone()).or_insert_with(|| value_text(val));
                    }
                    None => dropped += 1,
                }
            }
        }
        out.push(e);
    }
    (out, dropped)
}

pub fn baseline_json_extract<T: Scalar>(params: &ModelParams<T>, vocab: &Vocabulary, schema: &CompiledSchema, text: &str, max_len: usize) -> BaselineOutput {
    let enc = encode(params, &vocab.encode_text(text));
    let ids = greedy_decode(params, &enc, &[vocab.bos_id()], &DecodeConstraint::Unrestricted, max_len);
    let rendered = render_json(vocab, &ids);
    let parsed = parse_json_output(&rendered);
    let (entities, dropped) = match &parsed.value {
        Some(v) => json_to_entities(v, schema),
        None => (Vec::new(), 0),
    };
    BaselineOutput {
        entities: EntitySet::versioned(entities, schema.version()),
        text: rendered,
        output_tokens: ids.len(),
        repaired: parsed.repaired,
        unparseable: parsed.value.is_none(),
        dropped,
    }
}
