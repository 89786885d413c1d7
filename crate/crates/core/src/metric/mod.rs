//! The structured-entity score δ(E′, E): attribute-level Jaccard similarity,
//! optimal entity assignment under three pairing objectives, and the
//! k = max(m, n) averaged total.

mod assignment;
mod correlation;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DocumentRecord, EntitySet, StructuredEntity};
use crate::textproc::normalize_token_set;

pub use assignment::{
    brute_force_assignment, optimal_assignment, AssignmentError, AssignmentMatrix, SimilarityMatrix,
    BRUTE_FORCE_MAX_MAX, BRUTE_FORCE_MAX_MIN,
};
pub use correlation::{metric_correlation, pearson, spearman, Correlation, CorrelationSummary, SystemScores};

/// Property name under which entity names are reported in per-attribute
/// accuracy tables.
pub const NAME_PROPERTY: &str = "entity name";

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("schema version mismatch: prediction {pred:?} vs reference {reference:?}")]
    SchemaMismatch { pred: String, reference: String },
    #[error("name_weight must lie strictly between 0 and 1, got {0}")]
    BadNameWeight(f64),
    #[error("unknown match mode {0:?} (expected exact, approx or multiprop)")]
    UnknownMode(String),
    #[error("document {0:?} has no reference counterpart")]
    MissingReference(String),
    #[error("document {0:?} has no ground-truth entities")]
    MissingGold(String),
    #[error("need at least {need} systems, got {got}")]
    TooFewPoints { need: usize, got: usize },
}

/// Pairing objective used to build the assignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MatchMode {
    ExactName,
    ApproxName,
    MultiProp { name_weight: f64 },
}

impl MatchMode {
    pub const DEFAULT_NAME_WEIGHT: f64 = 0.5;

    pub fn multiprop(name_weight: f64) -> Result<Self, MetricError> {
        if name_weight > 0.0 && name_weight < 1.0 {
            Ok(MatchMode::MultiProp { name_weight })
        } else {
            Err(MetricError::BadNameWeight(name_weight))
        }
    }

    pub fn all(name_weight: f64) -> Result<[MatchMode; 3], MetricError> {
        Ok([MatchMode::ExactName, MatchMode::ApproxName, MatchMode::multiprop(name_weight)?])
    }

    pub fn label(&self) -> &'static str {
        match self {
            MatchMode::ExactName => "exact",
            MatchMode::ApproxName => "approx",
            MatchMode::MultiProp { .. } => "multiprop",
        }
    }
}

impl Default for MatchMode {
    fn default() -> Self {
        MatchMode::MultiProp {
            name_weight: Self::DEFAULT_NAME_WEIGHT,
        }
    }
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MatchMode {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "exact" | "exactname" => Ok(MatchMode::ExactName),
            "approx" | "approxname" => Ok(MatchMode::ApproxName),
            "multiprop" => Ok(MatchMode::default()),
            other => Err(MetricError::UnknownMode(other.to_string())),
        }
    }
}

/// |a ∩ b| / |a ∪ b|, with two empty sets counting as identical.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

pub fn prop_similarity(pred_value: &str, ref_value: &str) -> f64 {
    jaccard(&normalize_token_set(pred_value), &normalize_token_set(ref_value))
}

/// Mean property similarity over the entity name plus every attribute key
/// present in either entity. A key present on one side only scores 0.
pub fn entity_similarity(pred: &StructuredEntity, reference: &StructuredEntity) -> f64 {
    let keys: BTreeSet<&String> = pred.attributes.keys().chain(reference.attributes.keys()).collect();
    let mut total = prop_similarity(&pred.name, &reference.name);
    for k in &keys {
        total += match (pred.attributes.get(*k), reference.attributes.get(*k)) {
            (Some(p), Some(r)) => prop_similarity(p, r),
            _ => 0.0,
        };
    }
    total / (keys.len() + 1) as f64
}

/// Mean similarity over the non-name attribute keys of either entity, or
/// `None` when neither entity has attributes.
fn attribute_mean(pred: &StructuredEntity, reference: &StructuredEntity) -> Option<f64> {
    let keys: BTreeSet<&String> = pred.attributes.keys().chain(reference.attributes.keys()).collect();
    if keys.is_empty() {
        return None;
    }
    let sum: f64 = keys
        .iter()
        .map(|k| match (pred.attributes.get(*k), reference.attributes.get(*k)) {
            (Some(p), Some(r)) => prop_similarity(p, r),
            _ => 0.0,
        })
        .sum();
    Some(sum / keys.len() as f64)
}

/// The pairing objective; distinct from the entity similarity that is
/// summed over matched pairs.
pub fn assignment_score(pred: &StructuredEntity, reference: &StructuredEntity, mode: MatchMode) -> f64 {
    match mode {
        MatchMode::ExactName => {
            if pred.name.trim().to_lowercase() == reference.name.trim().to_lowercase() {
                1.0
            } else {
                0.0
            }
        }
        MatchMode::ApproxName => prop_similarity(&pred.name, &reference.name),
        MatchMode::MultiProp { name_weight } => {
            let name = prop_similarity(&pred.name, &reference.name);
            match attribute_mean(pred, reference) {
                Some(attrs) => name_weight * name + (1.0 - name_weight) * attrs,
                None => name,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: usize,
    #[serde(rename = "ref")]
    pub reference: usize,
    pub similarity: f64,
}

/// Score of one predicted set against one reference set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub delta: f64,
    pub mode: MatchMode,
    pub per_pair: Vec<MatchedPair>,
    pub per_attribute: BTreeMap<String, f64>,
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

fn check_versions(pred: &EntitySet, reference: &EntitySet) -> Result<(), MetricError> {
    match (&pred.schema_version, &reference.schema_version) {
        (Some(p), Some(r)) if p != r => Err(MetricError::SchemaMismatch {
            pred: p.clone(),
            reference: r.clone(),
        }),
        _ => Ok(()),
    }
}

pub fn similarity_matrix(pred: &[StructuredEntity], reference: &[StructuredEntity], mode: MatchMode) -> SimilarityMatrix<f64> {
    SimilarityMatrix::from_fn(pred.len(), reference.len(), |i, j| {
        assignment_score(&pred[i], &reference[j], mode).clamp(0.0, 1.0)
    })
    .expect("assignment scores lie in [0, 1]")
}

/// Index order of `ents` sorted by content, so that tie-breaking inside the
/// assignment does not depend on how the caller ordered the set.
fn canonical_order(ents: &[StructuredEntity]) -> Vec<usize> {
    let key = |e: &StructuredEntity| (e.name.trim().to_lowercase(), e.entity_type.clone(), e.attributes.clone(), e.name.clone());
    let keys: Vec<_> = ents.iter().map(key).collect();
    let mut idx: Vec<usize> = (0..ents.len()).collect();
    idx.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    idx
}

/// δ(E′, E): assign under `mode`, sum entity similarities over matched
/// pairs, divide by k = max(m, n). Two empty sets score 1.
pub fn evaluate(pred: &EntitySet, reference: &EntitySet, mode: MatchMode) -> Result<EvalReport, MetricError> {
    check_versions(pred, reference)?;
    let (m, n) = (pred.len(), reference.len());
    let k = m.max(n);
    let po = canonical_order(&pred.entities);
    let ro = canonical_order(&reference.entities);
    let ps: Vec<StructuredEntity> = po.iter().map(|&i| pred.entities[i].clone()).collect();
    let rs: Vec<StructuredEntity> = ro.iter().map(|&j| reference.entities[j].clone()).collect();
    let d = optimal_assignment(&similarity_matrix(&ps, &rs, mode));
    let mut per_pair: Vec<MatchedPair> = d
        .pairs
        .iter()
        .map(|&(i, j)| MatchedPair {
            pred: po[i],
            reference: ro[j],
            similarity: entity_similarity(&ps[i], &rs[j]),
        })
        .collect();
    let delta = if k == 0 {
        1.0
    } else {
        per_pair.iter().fold(0.0, |acc, p| acc + p.similarity) / k as f64
    };
    let pairs: Vec<(&StructuredEntity, &StructuredEntity)> = d.pairs.iter().map(|&(i, j)| (&ps[i], &rs[j])).collect();
    let per_attribute = attribute_accuracy(&pairs);
    per_pair.sort_by_key(|p| p.pred);
    Ok(EvalReport {
        delta,
        mode,
        per_pair,
        per_attribute,
        m,
        n,
        k,
    })
}

/// Mean property similarity per attribute key over matched pairs whose
/// reference carries the key; the entity name is reported as
/// [`NAME_PROPERTY`].
pub fn attribute_accuracy(pairs: &[(&StructuredEntity, &StructuredEntity)]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (pred, reference) in pairs {
        let e = acc.entry(NAME_PROPERTY.to_string()).or_default();
        e.0 += prop_similarity(&pred.name, &reference.name);
        e.1 += 1;
        for (key, rv) in &reference.attributes {
            let sim = pred.attributes.get(key).map_or(0.0, |pv| prop_similarity(pv, rv));
            let e = acc.entry(key.clone()).or_default();
            e.0 += sim;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect()
}

/// How per-document scores are combined into a corpus score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Mean of per-document δ.
    #[default]
    PerDoc,
    /// Σ matched similarity / Σ k over all documents.
    Pooled,
}

impl FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-doc" => Ok(Pooling::PerDoc),
            "pooled" => Ok(Pooling::Pooled),
            other => Err(format!("unknown pooling {other:?} (expected per-doc or pooled)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocScore {
    pub doc_id: String,
    #[serde(flatten)]
    pub report: EvalReport,
}

/// Corpus-level result of one mode over aligned prediction/reference files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub mode: MatchMode,
    pub pooling: Pooling,
    pub delta: f64,
    pub documents: Vec<DocScore>,
    pub per_attribute: BTreeMap<String, f64>,
}

/// Scores predictions against references matched by `doc_id`.
pub fn evaluate_corpus(
    preds: &[DocumentRecord],
    refs: &[DocumentRecord],
    mode: MatchMode,
    pooling: Pooling,
) -> Result<CorpusReport, MetricError> {
    let by_id: BTreeMap<&str, &DocumentRecord> = preds.iter().map(|r| (r.doc_id.as_str(), r)).collect();
    let empty = EntitySet::default();
    let mut documents = Vec::with_capacity(refs.len());
    let mut matched: Vec<(StructuredEntity, StructuredEntity)> = Vec::new();
    for r in refs {
        let gold = r.entities.as_ref().ok_or_else(|| MetricError::MissingGold(r.doc_id.clone()))?;
        let pred = by_id
            .get(r.doc_id.as_str())
            .ok_or_else(|| MetricError::MissingReference(r.doc_id.clone()))?;
        let pred_set = pred.entities.as_ref().unwrap_or(&empty);
        let report = evaluate(pred_set, gold, mode)?;
        for p in &report.per_pair {
            matched.push((pred_set.entities[p.pred].clone(), gold.entities[p.reference].clone()));
        }
        documents.push(DocScore {
            doc_id: r.doc_id.clone(),
            report,
        });
    }
    let delta = if documents.is_empty() {
        1.0
    } else {
        match pooling {
            Pooling::PerDoc => documents.iter().fold(0.0, |acc, d| acc + d.report.delta) / documents.len() as f64,
            Pooling::Pooled => {
                let num: f64 = documents.iter().map(|d| d.report.delta * d.report.k.max(1) as f64).sum();
                let den: usize = documents.iter().map(|d| d.report.k.max(1)).sum();
                num / den as f64
            }
        }
    };
    let pair_refs: Vec<(&StructuredEntity, &StructuredEntity)> = matched.iter().map(|(a, b)| (a, b)).collect();
    Ok(CorpusReport {
        mode,
        pooling,
        delta,
        documents,
        per_attribute: attribute_accuracy(&pair_refs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const T: &str = "6G-related technique";

    fn set(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    fn ent(name: &str, attrs: &[(&str, &str)]) -> StructuredEntity {
        attrs.iter().fold(StructuredEntity::new(name, T), |e, (k, v)| e.with(*k, *v))
    }

    #[test]
    fn jaccard_cases() {
        let sc = set(&["semantic", "communication"]);
        assert_eq!(jaccard(&sc, &sc), 1.0);
        assert_eq!(jaccard(&set(&["a"]), &set(&["b"])), 0.0);
        let v = jaccard(&sc, &set(&["semantic", "communication", "system"]));
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(jaccard(&set(&[]), &set(&[])), 1.0);
    }

    #[test]
    fn prop_similarity_cases() {
        assert!((prop_similarity("enhances security", "security enhancement") - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(prop_similarity("Semantic, communication", "semantic communication"), 1.0);
        assert_eq!(prop_similarity("", "x"), 0.0);
    }

    #[test]
    fn entity_similarity_cases() {
        let a = ent("sc", &[("Functions", "a b"), ("Benefits", "c"), ("Components and sub-systems", "d")]);
        assert_eq!(entity_similarity(&a, &a), 1.0);
        let b = ent("sc", &[("Functions", "x"), ("Benefits", "y"), ("Components and sub-systems", "z")]);
        assert!((entity_similarity(&b, &a) - 0.25).abs() < 1e-12);
        let r = ent("sc", &[("Functions", "a"), ("Benefits", "b")]);
        let p = ent("sc", &[("Functions", "a")]);
        assert!((entity_similarity(&p, &r) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn assignment_score_cases() {
        let a = ent("Semantic Communication", &[]);
        let b = ent("semantic communication", &[]);
        assert_eq!(assignment_score(&a, &b, MatchMode::ExactName), 1.0);
        let j = ent("joint sensing and communication", &[]);
        let i = ent("integrated sensing and communication", &[]);
        assert!((assignment_score(&j, &i, MatchMode::ApproxName) - 0.6).abs() < 1e-12);
        assert_eq!(assignment_score(&j, &i, MatchMode::ExactName), 0.0);

        // name jaccard 0.6, attribute mean 0.2 (one of five keys agrees)
        let keys = ["k1", "k2", "k3", "k4", "k5"];
        let mut p = j.clone();
        let mut r = i.clone();
        for (n, k) in keys.iter().enumerate() {
            p.attributes.insert(k.to_string(), "same".into());
            r.attributes.insert(k.to_string(), if n == 0 { "same" } else { "other" }.into());
        }
        let w = assignment_score(&p, &r, MatchMode::multiprop(0.5).unwrap());
        assert!((w - 0.4).abs() < 1e-12);
    }

    #[test]
    fn name_weight_bounds() {
        assert!(MatchMode::multiprop(0.0).is_err());
        assert!(MatchMode::multiprop(1.0).is_err());
        assert!(MatchMode::multiprop(0.7).is_ok());
        assert_eq!("approx".parse::<MatchMode>().unwrap(), MatchMode::ApproxName);
        assert!("fuzzy".parse::<MatchMode>().is_err());
    }

    #[test]
    fn evaluate_cases() {
        let e = ent("semantic communication", &[("Benefits", "enhanced security"), ("Functions", "x y")]);
        let one = EntitySet::new(vec![e.clone()]);
        for mode in MatchMode::all(0.5).unwrap() {
            assert_eq!(evaluate(&one, &one, mode).unwrap().delta, 1.0);
        }
        let two = EntitySet::new(vec![e.clone(), ent("other", &[])]);
        let r = evaluate(&EntitySet::default(), &two, MatchMode::ExactName).unwrap();
        assert_eq!((r.delta, r.k), (0.0, 2));
        let spurious = EntitySet::new(vec![e.clone(), ent("hallucinated thing", &[("Benefits", "q")])]);
        let r = evaluate(&spurious, &one, MatchMode::ExactName).unwrap();
        assert_eq!((r.m, r.n, r.k), (2, 1, 2));
        assert_eq!(r.delta, 0.5);
        let r = evaluate(&EntitySet::default(), &EntitySet::default(), MatchMode::ApproxName).unwrap();
        assert_eq!(r.delta, 1.0);
    }

    #[test]
    fn schema_mismatch() {
        let a = EntitySet::versioned(vec![], "v1");
        let b = EntitySet::versioned(vec![], "v2");
        assert!(matches!(evaluate(&a, &b, MatchMode::ExactName), Err(MetricError::SchemaMismatch { .. })));
    }

    #[test]
    fn attribute_accuracy_cases() {
        let r = ent("n", &[("Benefits", "a b"), ("Functions", "c")]);
        let exact = attribute_accuracy(&[(&r, &r)]);
        assert!(exact.values().all(|&v| v == 1.0));
        assert_eq!(exact.len(), 3);
        let p = ent("n", &[("Functions", "c")]);
        let acc = attribute_accuracy(&[(&p, &r)]);
        assert_eq!(acc["Benefits"], 0.0);
        assert_eq!(acc["Functions"], 1.0);
        assert!(!acc.contains_key("Components and sub-systems"));
    }

    #[test]
    fn corpus_pooling() {
        let e = ent("a", &[("Benefits", "x")]);
        let mk = |id: &str, ents: Vec<StructuredEntity>| DocumentRecord {
            doc_id: id.into(),
            text: "t".into(),
            entities: Some(EntitySet::new(ents)),
        };
        let refs = vec![mk("1", vec![e.clone()]), mk("2", vec![e.clone(), ent("b", &[]), ent("c", &[])])];
        let preds = vec![mk("1", vec![e.clone()]), mk("2", vec![e.clone()])];
        let per_doc = evaluate_corpus(&preds, &refs, MatchMode::ExactName, Pooling::PerDoc).unwrap();
        assert!((per_doc.delta - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-12);
        let pooled = evaluate_corpus(&preds, &refs, MatchMode::ExactName, Pooling::Pooled).unwrap();
        assert!((pooled.delta - 2.0 / 4.0).abs() < 1e-12);
        assert!(evaluate_corpus(&preds[..1], &refs, MatchMode::ExactName, Pooling::PerDoc).is_err());
    }

    #[test]
    fn empty_prediction_scores_positive_zero() {
        let reference = EntitySet::new(vec![ent("x", &[])]);
        let r = evaluate(&EntitySet::default(), &reference, MatchMode::ExactName).unwrap();
        assert_eq!(r.delta, 0.0);
        assert!(r.delta.is_sign_positive());
    }

    #[test]
    fn ties_do_not_depend_on_entity_order() {
        // both predictions tie on name; only one carries the right value
        let a = ent("x", &[("Benefits", "low latency")]);
        let b = ent("x", &[("Benefits", "high cost")]);
        let r1 = ent("x", &[("Benefits", "low latency")]);
        let r2 = ent("y", &[]);
        let refs = EntitySet::new(vec![r1.clone(), r2.clone()]);
        let refs_rev = EntitySet::new(vec![r2, r1]);
        for mode in MatchMode::all(0.5).unwrap() {
            let d1 = evaluate(&EntitySet::new(vec![a.clone(), b.clone()]), &refs, mode).unwrap().delta;
            let d2 = evaluate(&EntitySet::new(vec![b.clone(), a.clone()]), &refs_rev, mode).unwrap().delta;
            assert_eq!(d1.to_bits(), d2.to_bits(), "{mode}");
        }
    }
}
