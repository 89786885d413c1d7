//! Extraction schemas and their special-token registry.
//!
//! Every entity type and attribute key of a [`SchemaDef`] is compiled into a
//! single vocabulary item (`ent_type_<slug>` / `attr_<slug>`), so that stage-2
//! decoding emits exactly one token per schema element.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TYPE_PREFIX: &str = "ent_type_";
pub const KEY_PREFIX: &str = "attr_";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("schema validation: {0}")]
    Invalid(String),
    #[error("slug collision on {slug:?} between {first:?} and {second:?}")]
    SlugCollision {
        slug: String,
        first: String,
        second: String,
    },
    #[error("unknown schema element {0:?}")]
    UnknownElement(String),
    #[error("{0:?} names both an entity type and an attribute key")]
    AmbiguousElement(String),
    #[error("{0:?} is not a registered special token")]
    UnknownToken(String),
    #[error("compiled schema does not match its definition: {0}")]
    Corrupt(String),
    #[error("schema version mismatch: {left:?} vs {right:?}")]
    VersionMismatch { left: String, right: String },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

/// The fixed control vocabulary used by prompts and decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ControlToken {
    PredEntNames,
    PredTypeAndAttr,
    PredVal,
    EntSep,
    Bos,
    Eos,
    Pad,
}

impl ControlToken {
    pub const ALL: [ControlToken; 7] = [
        ControlToken::PredEntNames,
        ControlToken::PredTypeAndAttr,
        ControlToken::PredVal,
        ControlToken::EntSep,
        ControlToken::Bos,
        ControlToken::Eos,
        ControlToken::Pad,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControlToken::PredEntNames => "<pred_ent_names>",
            ControlToken::PredTypeAndAttr => "<pred_type_and_attribute>",
            ControlToken::PredVal => "<pred_val>",
            ControlToken::EntSep => "<ent_sep>",
            ControlToken::Bos => "<bos>",
            ControlToken::Eos => "<eos>",
            ControlToken::Pad => "<pad>",
        }
    }
}

impl fmt::Display for ControlToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A schema as authored: display names plus a version tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaDef {
    pub version: String,
    pub entity_types: Vec<String>,
    pub attribute_keys: Vec<String>,
}

impl SchemaDef {
    /// The 6GTech schema: one entity type and the attribute keys used for
    /// 6G technique abstracts.
    pub fn sixgtech() -> Self {
        SchemaDef {
            version: "6gtech-1".to_string(),
            entity_types: vec!["6G-related technique".to_string()],
            attribute_keys: [
                "Functions",
                "Benefits",
                "Components and sub-systems",
                "Associated technologies",
                "Operating frequency",
                "Key performance indicators",
                "Application and deployment scenarios",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path).map_err(|e| SchemaError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| SchemaError::Invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.version.trim().is_empty() {
            return Err(SchemaError::Invalid("version is empty".into()));
        }
        for (what, list) in [("entity_types", &self.entity_types), ("attribute_keys", &self.attribute_keys)] {
            if list.is_empty() {
                return Err(SchemaError::Invalid(format!("{what} is empty")));
            }
            let mut seen: HashMap<String, &str> = HashMap::new();
            for name in list {
                if name.trim().is_empty() {
                    return Err(SchemaError::Invalid(format!("{what} contains an empty name")));
                }
                let norm = name.trim().to_lowercase();
                if let Some(prev) = seen.insert(norm, name) {
                    return Err(SchemaError::Invalid(format!(
                        "{what} contains duplicates {prev:?} and {name:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Lowercases `name` and collapses every run of non-alphanumeric characters
/// into a single `_`, trimming leading and trailing separators.
pub fn slugify(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut pending_sep = false;
    for c in name.chars() {
        if c.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.extend(c.to_lowercase());
        } else {
            pending_sep = true;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    EntityType,
    AttributeKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaElement {
    pub kind: ElementKind,
    pub name: String,
    pub token: String,
}

/// Immutable registry of schema-derived special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledSchema {
    version: String,
    entity_types: Vec<SchemaElement>,
    attribute_keys: Vec<SchemaElement>,
    by_token: HashMap<String, (ElementKind, usize)>,
    type_by_slug: HashMap<String, usize>,
    key_by_slug: HashMap<String, usize>,
}

/// On-disk form of a compiled schema.
#[derive(Debug, Serialize, Deserialize)]
struct CompiledSchemaFile {
    version: String,
    entity_types: Vec<TokenEntry>,
    attribute_keys: Vec<TokenEntry>,
    control_tokens: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TokenEntry {
    name: String,
    token: String,
}

pub fn compile_schema(def: &SchemaDef) -> Result<CompiledSchema, SchemaError> {
    def.validate()?;
    let mut by_token = HashMap::new();
    let mut compile_list = |names: &[String], kind: ElementKind, prefix: &str| {
        let mut slugs: HashMap<String, usize> = HashMap::new();
        let mut elems = Vec::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            let slug = slugify(name);
            if slug.is_empty() {
                return Err(SchemaError::Invalid(format!("{name:?} has no alphanumeric characters")));
            }
            if let Some(&j) = slugs.get(&slug) {
                return Err(SchemaError::SlugCollision {
                    slug,
                    first: names[j].clone(),
                    second: name.clone(),
                });
            }
            let token = format!("{prefix}{slug}");
            by_token.insert(token.clone(), (kind, i));
            slugs.insert(slug, i);
            elems.push(SchemaElement {
                kind,
                name: name.trim().to_string(),
                token,
            });
        }
        Ok((elems, slugs))
    };
    let (entity_types, type_by_slug) = compile_list(&def.entity_types, ElementKind::EntityType, TYPE_PREFIX)?;
    let (attribute_keys, key_by_slug) = compile_list(&def.attribute_keys, ElementKind::AttributeKey, KEY_PREFIX)?;
    Ok(CompiledSchema {
        version: def.version.trim().to_string(),
        entity_types,
        attribute_keys,
        by_token,
        type_by_slug,
        key_by_slug,
    })
}

impl CompiledSchema {
    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn entity_types(&self) -> &[SchemaElement] {
        &self.entity_types
    }

    pub fn attribute_keys(&self) -> &[SchemaElement] {
        &self.attribute_keys
    }

    pub fn control_tokens(&self) -> &'static [ControlToken] {
        &ControlToken::ALL
    }

    /// All special tokens in registry order: types, keys, then controls.
    pub fn special_tokens(&self) -> Vec<String> {
        self.entity_types
            .iter()
            .chain(&self.attribute_keys)
            .map(|e| e.token.clone())
            .chain(ControlToken::ALL.iter().map(|c| c.as_str().to_string()))
            .collect()
    }

    pub fn definition(&self) -> SchemaDef {
        SchemaDef {
            version: self.version.clone(),
            entity_types: self.entity_types.iter().map(|e| e.name.clone()).collect(),
            attribute_keys: self.attribute_keys.iter().map(|e| e.name.clone()).collect(),
        }
    }

    /// Resolves an entity-type display name, matching on its slug so that
    /// case and punctuation variants align with the registered element.
    pub fn resolve_type(&self, name: &str) -> Option<&SchemaElement> {
        self.type_by_slug.get(&slugify(name)).map(|&i| &self.entity_types[i])
    }

    pub fn resolve_key(&self, name: &str) -> Option<&SchemaElement> {
        self.key_by_slug.get(&slugify(name)).map(|&i| &self.attribute_keys[i])
    }

    /// Position of a key in declaration order.
    pub fn key_index(&self, name: &str) -> Option<usize> {
        self.key_by_slug.get(&slugify(name)).copied()
    }

    pub fn lookup_token(&self, element: &str) -> Result<&str, SchemaError> {
        match (self.resolve_type(element), self.resolve_key(element)) {
            (Some(_), Some(_)) => Err(SchemaError::AmbiguousElement(element.to_string())),
            (Some(e), None) | (None, Some(e)) => Ok(&e.token),
            (None, None) => Err(SchemaError::UnknownElement(element.to_string())),
        }
    }

    pub fn type_token(&self, name: &str) -> Result<&str, SchemaError> {
        self.resolve_type(name)
            .map(|e| e.token.as_str())
            .ok_or_else(|| SchemaError::UnknownElement(name.to_string()))
    }

    pub fn key_token(&self, name: &str) -> Result<&str, SchemaError> {
        self.resolve_key(name)
            .map(|e| e.token.as_str())
            .ok_or_else(|| SchemaError::UnknownElement(name.to_string()))
    }

    pub fn decode_token(&self, token: &str) -> Result<&SchemaElement, SchemaError> {
        match self.by_token.get(token) {
            Some(&(ElementKind::EntityType, i)) => Ok(&self.entity_types[i]),
            Some(&(ElementKind::AttributeKey, i)) => Ok(&self.attribute_keys[i]),
            None => Err(SchemaError::UnknownToken(token.to_string())),
        }
    }

    pub fn ensure_same_version(&self, other: &str) -> Result<(), SchemaError> {
        if self.version == other {
            Ok(())
        } else {
            Err(SchemaError::VersionMismatch {
                left: self.version.clone(),
                right: other.to_string(),
            })
        }
    }

    pub fn to_json(&self) -> String {
        let file = CompiledSchemaFile {
            version: self.version.clone(),
            entity_types: self.entity_types.iter().map(TokenEntry::from).collect(),
            attribute_keys: self.attribute_keys.iter().map(TokenEntry::from).collect(),
            control_tokens: ControlToken::ALL.iter().map(|c| c.as_str().to_string()).collect(),
        };
        serde_json::to_string_pretty(&file).expect("compiled schema serializes")
    }

    /// Parses a compiled registry, recompiling it from its display names and
    /// rejecting files whose tokens disagree with the slug rule.
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let file: CompiledSchemaFile =
            serde_json::from_str(text).map_err(|e| SchemaError::Invalid(e.to_string()))?;
        let def = SchemaDef {
            version: file.version,
            entity_types: file.entity_types.iter().map(|e| e.name.clone()).collect(),
            attribute_keys: file.attribute_keys.iter().map(|e| e.name.clone()).collect(),
        };
        let compiled = compile_schema(&def)?;
        for (entry, elem) in file
            .entity_types
            .iter()
            .chain(&file.attribute_keys)
            .zip(compiled.entity_types.iter().chain(&compiled.attribute_keys))
        {
            if entry.token != elem.token {
                return Err(SchemaError::Corrupt(format!(
                    "{:?} registered as {:?}, expected {:?}",
                    entry.name, entry.token, elem.token
                )));
            }
        }
        let controls: Vec<&str> = ControlToken::ALL.iter().map(|c| c.as_str()).collect();
        if file.control_tokens != controls {
            return Err(SchemaError::Corrupt("control token block differs".into()));
        }
        Ok(compiled)
    }

    /// Loads either a compiled registry or a plain schema definition.
    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path).map_err(|e| SchemaError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| SchemaError::Invalid(e.to_string()))?;
        if value.get("control_tokens").is_some() {
            Self::from_json(&text)
        } else {
            let def: SchemaDef =
                serde_json::from_value(value).map_err(|e| SchemaError::Invalid(e.to_string()))?;
            compile_schema(&def)
        }
    }
}

impl From<&SchemaElement> for TokenEntry {
    fn from(e: &SchemaElement) -> Self {
        TokenEntry {
            name: e.name.clone(),
            token: e.token.clone(),
        }
    }
}

/// Per-element comparison of spelled-out length versus the single special
/// token that replaces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementSavings {
    pub kind: ElementKind,
    pub name: String,
    pub baseline_tokens: usize,
    pub special_tokens: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsReport {
    pub elements: Vec<ElementSavings>,
    pub mean_ratio: f64,
}

/// Measures how many pieces `split` produces for each display name,
/// compared to the one token it compiles to.
pub fn token_savings<F>(schema: &CompiledSchema, mut split: F) -> SavingsReport
where
    F: FnMut(&str) -> Vec<String>,
{
    let elements: Vec<ElementSavings> = schema
        .entity_types
        .iter()
        .chain(&schema.attribute_keys)
        .map(|e| {
            // a name always costs at least the one token that replaces it
            let baseline = split(&e.name).len().max(1);
            ElementSavings {
                kind: e.kind,
                name: e.name.clone(),
                baseline_tokens: baseline,
                special_tokens: 1,
                ratio: baseline as f64,
            }
        })
        .collect();
    let mean_ratio = elements.iter().map(|e| e.ratio).sum::<f64>() / elements.len() as f64;
    SavingsReport { elements, mean_ratio }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn def(types: &[&str], keys: &[&str]) -> SchemaDef {
        SchemaDef {
            version: "t".into(),
            entity_types: types.iter().map(|s| s.to_string()).collect(),
            attribute_keys: keys.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn slug_rule() {
        assert_eq!(slugify("6G-related technique"), "6g_related_technique");
        assert_eq!(slugify("Components and sub-systems"), "components_and_sub_systems");
        assert_eq!(slugify("  (A/B)  "), "a_b");
    }

    #[test]
    fn compiles_6gtech_tokens() {
        let s = compile_schema(&SchemaDef::sixgtech()).unwrap();
        assert_eq!(s.lookup_token("6G-related technique").unwrap(), "ent_type_6g_related_technique");
        assert_eq!(s.lookup_token("Associated technologies").unwrap(), "attr_associated_technologies");
        assert_eq!(s.lookup_token("Benefits").unwrap(), "attr_benefits");
        assert!(matches!(s.lookup_token("Nonexistent key"), Err(SchemaError::UnknownElement(_))));
    }

    #[test]
    fn decode_round_trip() {
        let s = compile_schema(&SchemaDef::sixgtech()).unwrap();
        let e = s.decode_token("attr_benefits").unwrap();
        assert_eq!((e.kind, e.name.as_str()), (ElementKind::AttributeKey, "Benefits"));
        let e = s.decode_token("ent_type_6g_related_technique").unwrap();
        assert_eq!((e.kind, e.name.as_str()), (ElementKind::EntityType, "6G-related technique"));
        assert!(matches!(s.decode_token("hello"), Err(SchemaError::UnknownToken(_))));
        for elem in s.entity_types().iter().chain(s.attribute_keys()) {
            assert_eq!(s.decode_token(s.lookup_token(&elem.name).unwrap()).unwrap(), elem);
        }
    }

    #[test]
    fn slug_collision_names_both() {
        let err = compile_schema(&def(&["T"], &["A/B", "A B"])).unwrap_err();
        assert_eq!(
            err,
            SchemaError::SlugCollision {
                slug: "a_b".into(),
                first: "A/B".into(),
                second: "A B".into()
            }
        );
    }

    #[test]
    fn rejects_empty_and_duplicate_names() {
        assert!(matches!(compile_schema(&def(&["T"], &[" "])), Err(SchemaError::Invalid(_))));
        assert!(matches!(compile_schema(&def(&["T"], &[])), Err(SchemaError::Invalid(_))));
        assert!(matches!(compile_schema(&def(&["T", " t "], &["k"])), Err(SchemaError::Invalid(_))));
        assert!(matches!(compile_schema(&def(&["T"], &["--"])), Err(SchemaError::Invalid(_))));
    }

    #[test]
    fn ambiguous_lookup() {
        let s = compile_schema(&def(&["Protocol"], &["Protocol", "Rate"])).unwrap();
        assert!(matches!(s.lookup_token("protocol"), Err(SchemaError::AmbiguousElement(_))));
        assert_eq!(s.type_token("protocol").unwrap(), "ent_type_protocol");
        assert_eq!(s.key_token("Protocol").unwrap(), "attr_protocol");
    }

    #[test]
    fn special_token_closure() {
        let s = compile_schema(&SchemaDef::sixgtech()).unwrap();
        let toks = s.special_tokens();
        let uniq: std::collections::HashSet<_> = toks.iter().collect();
        assert_eq!(toks.len(), 1 + 7 + ControlToken::ALL.len());
        assert_eq!(uniq.len(), toks.len());
    }

    #[test]
    fn json_round_trip_and_tamper_detection() {
        let s = compile_schema(&SchemaDef::sixgtech()).unwrap();
        let text = s.to_json();
        assert_eq!(CompiledSchema::from_json(&text).unwrap(), s);
        assert_eq!(compile_schema(&SchemaDef::sixgtech()).unwrap().to_json(), text);
        let tampered = text.replace("attr_benefits", "attr_perks");
        assert!(matches!(CompiledSchema::from_json(&tampered), Err(SchemaError::Corrupt(_))));
    }

    #[test]
    fn savings_ratio_lower_bound() {
        let s = compile_schema(&def(&["Technique"], &["Benefits", "Operating frequency"])).unwrap();
        let r = token_savings(&s, |n| n.split_whitespace().map(str::to_string).collect());
        assert_eq!(r.elements[0].ratio, 1.0);
        assert_eq!(r.elements[2].ratio, 2.0);
        assert!(r.elements.iter().all(|e| e.ratio >= 1.0));
    }
}
