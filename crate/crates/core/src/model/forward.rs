//! Teacher-forced training graph and the summed cross-entropy loss.

use std::collections::BTreeMap;

use rand::Rng;

use super::attention::Segment;
use super::matrix::{positional, Matrix};
use super::params::{Attn, Ffn, Norm};
use super::tape::{Tape, Var};
use super::{ModelError, ModelParams, PAD_ID};
use crate::scalar::Scalar;

/// One teacher-forced sequence. `source` indexes `Batch::sources`; `group`
/// is a caller-defined label used to split the loss (e.g. stage number).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub group: usize,
    pub source: usize,
    pub prompt: Vec<u32>,
    pub target: Vec<u32>,
}

/// Examples sharing a source are encoded once per batch.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Batch {
    pub sources: Vec<Vec<u32>>,
    pub examples: Vec<Example>,
}

impl Batch {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an example, reusing an identical source already in the batch.
    pub fn push(&mut self, group: usize, source: &[u32], prompt: Vec<u32>, target: Vec<u32>) {
        let idx = match self.sources.iter().position(|s| s == source) {
            Some(i) => i,
            None => {
                self.sources.push(source.to_vec());
                self.sources.len() - 1
            }
        };
        self.examples.push(Example {
            group,
            source: idx,
            prompt,
            target,
        });
    }

    pub fn from_triples<I>(triples: I) -> Self
    where
        I: IntoIterator<Item = (Vec<u32>, Vec<u32>, Vec<u32>)>,
    {
        let mut b = Batch::new();
        for (s, p, t) in triples {
            b.push(0, &s, p, t);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Concatenates two batches.
    pub fn extend(&mut self, other: &Batch) {
        for e in &other.examples {
            self.push(e.group, &other.sources[e.source], e.prompt.clone(), e.target.clone());
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    /// Summed token cross-entropy over all target positions.
    pub total: T,
    pub per_group: BTreeMap<usize, T>,
    pub target_tokens: usize,
    /// Sources longer than `max_src_len` that were truncated.
    pub truncated_sources: usize,
    /// One gradient per parameter tensor, in `ModelParams::tensors` order.
    pub grads: Option<Vec<Matrix<T>>>,
}

pub(crate) struct Ctx<'a, T> {
    pub tape: Tape<T>,
    pub heads: usize,
    pub scale: T,
    pub dropout: Option<(f64, &'a mut dyn rand::RngCore)>,
}

impl<T: Scalar> Ctx<'_, T> {
    fn maybe_dropout(&mut self, x: Var) -> Var {
        let Some((rate, rng)) = self.dropout.as_mut() else { return x };
        if *rate <= 0.0 {
            return x;
        }
        let keep = T::of(1.0 / (1.0 - *rate));
        let n = self.tape.value(x).len();
        let mask = (0..n).map(|_| if rng.gen::<f64>() < *rate { T::zero() } else { keep }).collect();
        self.tape.dropout(x, mask)
    }

    fn ln(&mut self, x: Var, n: Norm) -> Var {
        self.tape.layer_norm(x, n.g, n.b)
    }

    fn ffn(&mut self, x: Var, f: Ffn) -> Var {
        let h = self.tape.matmul(x, f.w1);
        let h = self.tape.add_row(h, f.b1);
        let h = self.tape.gelu(h);
        let h = self.tape.matmul(h, f.w2);
        self.tape.add_row(h, f.b2)
    }

    #[allow(clippy::too_many_arguments)]
    fn attn(&mut self, xq: Var, k: Var, v: Var, a: Attn, segs: Vec<Segment>, key_valid: Option<&[bool]>) -> Var {
        let q = self.tape.matmul(xq, a.wq);
        let o = self.tape.attention(q, k, v, self.heads, segs, key_valid);
        self.tape.matmul(o, a.wo)
    }

    fn embed(&mut self, table: Var, ids: &[u32], starts: &[(usize, usize)], d: usize) -> Var {
        let e = self.tape.embed(table, ids, self.scale);
        let mut pe = Matrix::zeros(0, d);
        for &(_, len) in starts {
            pe.push_rows(&positional(0, len, d));
        }
        let pe = self.tape.leaf(pe);
        let x = self.tape.add(e, pe);
        self.maybe_dropout(x)
    }
}

fn validate<T: Scalar>(params: &ModelParams<T>, batch: &Batch) -> Result<(), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let v = params.config().vocab_size as u32;
    let check = |ids: &[u32]| ids.iter().all(|&i| i < v);
    for (i, s) in batch.sources.iter().enumerate() {
        if s.is_empty() {
            return Err(ModelError::InvalidExample(format!("source {i} is empty")));
        }
        if !check(s) {
            return Err(ModelError::TokenOutOfRange);
        }
    }
    for (i, e) in batch.examples.iter().enumerate() {
        if e.prompt.is_empty() {
            return Err(ModelError::InvalidExample(format!("example {i} has an empty prompt")));
        }
        if e.source >= batch.sources.len() {
            return Err(ModelError::InvalidExample(format!("example {i} references a missing source")));
        }
        if !check(&e.prompt) || !check(&e.target) {
            return Err(ModelError::TokenOutOfRange);
        }
        if e.target.iter().all(|&t| t == PAD_ID) {
            return Err(ModelError::AllPadTarget(i));
        }
    }
    Ok(())
}

/// Builds the full graph for `batch` and optionally backpropagates.
pub(crate) fn run_batch<T: Scalar>(
    params: &ModelParams<T>,
    batch: &Batch,
    dropout: Option<&mut dyn rand::RngCore>,
    want_grads: bool,
) -> Result<LossOutput<T>, ModelError> {
    validate(params, batch)?;
    let cfg = params.config();
    let d = cfg.d_model;
    let lay = &params.layout;
    let mut ctx = Ctx {
        tape: Tape::new(),
        heads: cfg.n_heads,
        scale: T::of((d as f64).sqrt()),
        dropout: dropout.map(|r| (cfg.dropout_rate, r)),
    };
    // parameter tensors occupy the first tape slots, in order
    for t in params.tensors() {
        ctx.tape.leaf(t.clone());
    }

    // encoder over all sources stacked
    let mut src_ids = Vec::new();
    let mut src_spans = Vec::new();
    let mut truncated = 0;
    for s in &batch.sources {
        let take = s.len().min(cfg.max_src_len);
        if take < s.len() {
            truncated += 1;
        }
        src_spans.push((src_ids.len(), take));
        src_ids.extend_from_slice(&s[..take]);
    }
    let key_valid: Vec<bool> = src_ids.iter().map(|&t| t != PAD_ID).collect();
    let enc_segs: Vec<Segment> = src_spans
        .iter()
        .map(|&(o, n)| Segment {
            q0: o,
            qn: n,
            k0: o,
            kn: n,
            causal: None,
        })
        .collect();
    let mut x = ctx.embed(lay.embed, &src_ids, &src_spans, d);
    for l in &lay.enc {
        let h = ctx.ln(x, l.ln1);
        let k = ctx.tape.matmul(h, l.attn.wk);
        let v = ctx.tape.matmul(h, l.attn.wv);
        let a = ctx.attn(h, k, v, l.attn, enc_segs.clone(), Some(&key_valid));
        let a = ctx.maybe_dropout(a);
        x = ctx.tape.add(x, a);
        let h = ctx.ln(x, l.ln2);
        let f = ctx.ffn(h, l.ffn);
        let f = ctx.maybe_dropout(f);
        x = ctx.tape.add(x, f);
    }
    let enc = ctx.ln(x, lay.enc_ln);

    // decoder over all examples stacked
    let mut dec_ids = Vec::new();
    let mut dec_spans = Vec::new();
    let mut targets = Vec::new();
    let mut row_group = Vec::new();
    for e in &batch.examples {
        let start = dec_ids.len();
        dec_ids.extend_from_slice(&e.prompt);
        dec_ids.extend_from_slice(&e.target[..e.target.len() - 1]);
        let len = dec_ids.len() - start;
        dec_spans.push((start, len));
        targets.extend(std::iter::repeat_n(None, e.prompt.len() - 1));
        targets.extend(e.target.iter().map(|&t| (t != PAD_ID).then_some(t)));
        row_group.extend(std::iter::repeat_n(e.group, len));
    }
    let self_segs: Vec<Segment> = dec_spans
        .iter()
        .map(|&(o, n)| Segment {
            q0: o,
            qn: n,
            k0: o,
            kn: n,
            causal: Some(0),
        })
        .collect();
    let cross_segs: Vec<Segment> = batch
        .examples
        .iter()
        .zip(&dec_spans)
        .map(|(e, &(o, n))| {
            let (k0, kn) = src_spans[e.source];
            Segment {
                q0: o,
                qn: n,
                k0,
                kn,
                causal: None,
            }
        })
        .collect();
    let mut y = ctx.embed(lay.embed, &dec_ids, &dec_spans, d);
    for l in &lay.dec {
        let h = ctx.ln(y, l.ln1);
        let k = ctx.tape.matmul(h, l.self_attn.wk);
        let v = ctx.tape.matmul(h, l.self_attn.wv);
        let a = ctx.attn(h, k, v, l.self_attn, self_segs.clone(), None);
        let a = ctx.maybe_dropout(a);
        y = ctx.tape.add(y, a);
        let h = ctx.ln(y, l.ln2);
        let ck = ctx.tape.matmul(enc, l.cross.wk);
        let cv = ctx.tape.matmul(enc, l.cross.wv);
        let a = ctx.attn(h, ck, cv, l.cross, cross_segs.clone(), Some(&key_valid));
        let a = ctx.maybe_dropout(a);
        y = ctx.tape.add(y, a);
        let h = ctx.ln(y, l.ln3);
        let f = ctx.ffn(h, l.ffn);
        let f = ctx.maybe_dropout(f);
        y = ctx.tape.add(y, f);
    }
    let out = ctx.ln(y, lay.dec_ln);
    let logits = ctx.tape.matmul_bt(out, lay.embed);
    let target_tokens = targets.iter().filter(|t| t.is_some()).count();
    let (loss, row_losses) = ctx.tape.cross_entropy(logits, targets);

    let mut per_group = BTreeMap::new();
    for (g, l) in row_group.iter().zip(&row_losses) {
        *per_group.entry(*g).or_insert(T::zero()) += *l;
    }
    let total = ctx.tape.value(loss).get(0, 0);
    let grads = want_grads.then(|| {
        let mut all = ctx.tape.backward(loss);
        params
            .tensors()
            .iter()
            .enumerate()
            .map(|(i, t)| all[i].take().unwrap_or_else(|| Matrix::zeros(t.rows(), t.cols())))
            .collect()
    });
    Ok(LossOutput {
        total,
        per_group,
        target_tokens,
        truncated_sources: truncated,
        grads,
    })
}

/// Loss and gradients with dropout disabled.
pub fn batch_loss<T: Scalar>(params: &ModelParams<T>, batch: &Batch) -> Result<LossOutput<T>, ModelError> {
    run_batch(params, batch, None, true)
}

/// Loss only, dropout disabled.
pub fn batch_loss_value<T: Scalar>(params: &ModelParams<T>, batch: &Batch) -> Result<LossOutput<T>, ModelError> {
    run_batch(params, batch, None, false)
}
