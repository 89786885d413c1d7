//! The 6GTech data model: JSONL records, validation, statistics, splitting
//! and a deterministic synthetic generator.

mod split;
mod stats;
mod synth;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::CompiledSchema;

pub use split::{split, SplitError};
pub use stats::{stats, CorpusStats};
pub use synth::{synth_generate, synth_generate_with_bookkeeping, SynthBookkeeping};

/// An extracted unit: a name, an entity type, and attribute values keyed by
/// attribute display name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredEntity {
    pub name: String,
    #[serde(rename = "type")]
    pub entity_type: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

impl StructuredEntity {
    pub fn new(name: impl Into<String>, entity_type: impl Into<String>) -> Self {
        StructuredEntity {
            name: name.into(),
            entity_type: entity_type.into(),
            attributes: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.insert(key.into(), value.into());
        self
    }
}

/// A set of structured entities. Order is for presentation only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySet {
    pub entities: Vec<StructuredEntity>,
    /// Version of the schema the entities were produced under, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_version: Option<String>,
}

impl EntitySet {
    pub fn new(entities: Vec<StructuredEntity>) -> Self {
        EntitySet {
            entities,
            schema_version: None,
        }
    }

    pub fn versioned(entities: Vec<StructuredEntity>, version: impl Into<String>) -> Self {
        EntitySet {
            entities,
            schema_version: Some(version.into()),
        }
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

/// One JSONL row: a document and, for gold files, its entities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RawRecord", into = "RawRecord")]
pub struct DocumentRecord {
    pub doc_id: String,
    pub text: String,
    pub entities: Option<EntitySet>,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    doc_id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schema_version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entities: Option<Vec<StructuredEntity>>,
}

impl From<RawRecord> for DocumentRecord {
    fn from(r: RawRecord) -> Self {
        let schema_version = r.schema_version;
        DocumentRecord {
            doc_id: r.doc_id,
            text: r.text,
            entities: r.entities.map(|entities| EntitySet {
                entities,
                schema_version,
            }),
        }
    }
}

impl From<DocumentRecord> for RawRecord {
    fn from(d: DocumentRecord) -> Self {
        let (entities, schema_version) = match d.entities {
            Some(set) => (Some(set.entities), set.schema_version),
            None => (None, None),
        };
        RawRecord {
            doc_id: d.doc_id,
            text: d.text,
            schema_version,
            entities,
        }
    }
}

impl DocumentRecord {
    pub fn gold(&self) -> &[StructuredEntity] {
        self.entities.as_ref().map(|s| s.entities.as_slice()).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationIssue {
    pub line: usize,
    pub doc_id: Option<String>,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.doc_id {
            Some(id) => write!(f, "line {} (doc {id}): {}", self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

/// All problems found in one file, ordered by line number.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} validation error(s)", self.issues.len())?;
        for issue in &self.issues {
            writeln!(f, "  {issue}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{0}")]
    Validation(ValidationReport),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Gold files must carry an `entities` array on every record.
    pub require_entities: bool,
}

impl LoadOptions {
    pub const GOLD: LoadOptions = LoadOptions { require_entities: true };
    pub const INPUT: LoadOptions = LoadOptions { require_entities: false };
}

/// Parses and validates JSONL text. Entity types and attribute keys are
/// aligned to the schema's canonical display names (matched by slug).
pub fn parse_dataset(text: &str, schema: &CompiledSchema, opts: LoadOptions) -> Result<Vec<DocumentRecord>, CorpusError> {
    let mut records = Vec::new();
    let mut report = ValidationReport::default();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: DocumentRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                report.issues.push(ValidationIssue {
                    line: line_no,
                    doc_id: None,
                    message: format!("malformed record: {e}"),
                });
                continue;
            }
        };
        let doc_id = rec.doc_id.clone();
        let mut issue = |message: String| {
            report.issues.push(ValidationIssue {
                line: line_no,
                doc_id: Some(doc_id.clone()),
                message,
            })
        };
        if !seen_ids.insert(rec.doc_id.clone()) {
            issue("duplicate doc_id".into());
        }
        if rec.text.trim().is_empty() {
            issue("text is empty".into());
        }
        match rec.entities.as_mut() {
            None if opts.require_entities => issue("missing entities".into()),
            None => {}
            Some(set) => {
                if let Some(v) = &set.schema_version {
                    if v != schema.version() {
                        issue(format!("schema version {v:?} differs from {:?}", schema.version()));
                    }
                }
                set.schema_version = Some(schema.version().to_string());
                for ent in &mut set.entities {
                    if ent.name.trim().is_empty() {
                        issue("entity with empty name".into());
                    }
                    match schema.resolve_type(&ent.entity_type) {
                        Some(t) => ent.entity_type = t.name.clone(),
                        None => issue(format!("entity {:?}: unknown type {:?}", ent.name, ent.entity_type)),
                    }
                    let mut aligned = BTreeMap::new();
                    for (k, v) in std::mem::take(&mut ent.attributes) {
                        match schema.resolve_key(&k) {
                            Some(key) => {
                                if aligned.insert(key.name.clone(), v).is_some() {
                                    issue(format!("entity {:?}: key {k:?} given twice", ent.name));
                                }
                            }
                            None => issue(format!("entity {:?}: unknown key {k:?}", ent.name)),
                        }
                    }
                    ent.attributes = aligned;
                }
            }
        }
        records.push(rec);
    }
    if report.issues.is_empty() {
        Ok(records)
    } else {
        Err(CorpusError::Validation(report))
    }
}

pub fn load_dataset(path: &Path, schema: &CompiledSchema, opts: LoadOptions) -> Result<Vec<DocumentRecord>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_dataset(&text, schema, opts)
}

pub fn to_jsonl(records: &[DocumentRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_dataset(path: &Path, records: &[DocumentRecord]) -> Result<(), CorpusError> {
    std::fs::write(path, to_jsonl(records)).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{compile_schema, SchemaDef};

    fn schema() -> CompiledSchema {
        compile_schema(&SchemaDef::sixgtech()).unwrap()
    }

    const TWO: &str = r#"{"doc_id":"a","text":"Semantic communication enhances security.","entities":[{"name":"semantic communication","type":"6G-related technique","attributes":{"Benefits":"enhances security"}}]}
{"doc_id":"b","text":"Nothing here.","entities":[]}
"#;

    #[test]
    fn loads_valid_file() {
        let recs = parse_dataset(TWO, &schema(), LoadOptions::GOLD).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].gold()[0].attributes["Benefits"], "enhances security");
        assert_eq!(recs[1].gold().len(), 0);
    }

    #[test]
    fn unknown_key_names_doc_and_key() {
        let text = r#"{"doc_id":"x1","text":"t","entities":[{"name":"n","type":"6G-related technique","attributes":{"Speed":"fast"}}]}"#;
        let CorpusError::Validation(rep) = parse_dataset(text, &schema(), LoadOptions::GOLD).unwrap_err() else {
            panic!("expected validation error")
        };
        assert_eq!(rep.issues.len(), 1);
        assert_eq!(rep.issues[0].doc_id.as_deref(), Some("x1"));
        assert!(rep.issues[0].message.contains("Speed"));
    }

    #[test]
    fn aggregates_errors_in_line_order() {
        let text = "not json\n{\"doc_id\":\"a\",\"text\":\"x\"}\n{\"doc_id\":\"a\",\"text\":\" \",\"entities\":[]}\n";
        let CorpusError::Validation(rep) = parse_dataset(text, &schema(), LoadOptions::GOLD).unwrap_err() else {
            panic!()
        };
        let lines: Vec<usize> = rep.issues.iter().map(|i| i.line).collect();
        assert_eq!(lines, vec![1, 2, 3, 3]);
        // prediction inputs may omit entities
        assert!(parse_dataset("{\"doc_id\":\"a\",\"text\":\"x\"}", &schema(), LoadOptions::INPUT).is_ok());
    }

    #[test]
    fn aligns_case_variants_to_schema_names() {
        let text = r#"{"doc_id":"a","text":"t","entities":[{"name":"n","type":"6g related technique","attributes":{"benefits":"v","KEY PERFORMANCE INDICATORS":"w"}}]}"#;
        let recs = parse_dataset(text, &schema(), LoadOptions::GOLD).unwrap();
        let e = &recs[0].gold()[0];
        assert_eq!(e.entity_type, "6G-related technique");
        assert!(e.attributes.contains_key("Benefits"));
        assert!(e.attributes.contains_key("Key performance indicators"));
    }

    #[test]
    fn version_mismatch_rejected() {
        let text = r#"{"doc_id":"a","text":"t","schema_version":"other","entities":[]}"#;
        assert!(parse_dataset(text, &schema(), LoadOptions::GOLD).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let s = schema();
        let recs = parse_dataset(TWO, &s, LoadOptions::GOLD).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        save_dataset(&p, &recs).unwrap();
        assert_eq!(load_dataset(&p, &s, LoadOptions::GOLD).unwrap(), recs);
    }
}
