use serde::{Deserialize, Serialize};

use crate::corpus::DocumentRecord;
use crate::schema::CompiledSchema;

/// Stage-2 output length per entity: one token per schema element versus
/// the element names spelled out as pieces with a separator between items.
/// Both sides count the closing EOS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEfficiency {
    pub entities: usize,
    pub special_mean: f64,
    pub spelled_mean: f64,
    pub ratio: f64,
}

pub fn stage2_token_efficiency<F>(records: &[DocumentRecord], schema: &CompiledSchema, mut split: F) -> TokenEfficiency
where
    F: FnMut(&str) -> Vec<String>,
{
    let (mut n, mut special, mut spelled) = (0usize, 0usize, 0usize);
    for r in records {
        for e in r.gold() {
            let ty = schema.resolve_type(&e.entity_type).map_or(e.entity_type.as_str(), |t| t.name.as_str());
            let keys: Vec<&str> = e
                .attributes
                .keys()
                .map(|k| schema.resolve_key(k).map_or(k.as_str(), |el| el.name.as_str()))
                .collect();
            n += 1;
            special += 1 + keys.len() + 1;
            spelled += split(ty).len() + keys.iter().map(|k| split(k).len() + 1).sum::<usize>() + 1;
        }
    }
    let d = n.max(1) as f64;
    let (special_mean, spelled_mean) = (special as f64 / d, spelled as f64 / d);
    TokenEfficiency {
        entities: n,
        special_mean,
        spelled_mean,
        ratio: if special_mean > 0.0 { spelled_mean / special_mean } else { 0.0 },
    }
}
