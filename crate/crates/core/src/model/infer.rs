//! Inference: encode once, then incremental decoding with per-sequence
//! key/value caches. Row-wise arithmetic matches the training graph, so a
//! sequence decodes to the same ids alone or inside a batch.

use super::attention::{attend, Segment};
use super::constraint::DecodeConstraint;
use super::matrix::{gelu, layer_norm, positional, Matrix};
use super::params::{Ffn, Norm};
use super::{ModelParams, EOS_ID, PAD_ID};
use crate::scalar::Scalar;

/// Contextual vectors for one source plus the per-layer cross-attention
/// keys and values derived from them.
#[derive(Debug, Clone)]
pub struct EncoderOutput<T> {
    states: Matrix<T>,
    key_valid: Vec<bool>,
    cross: Vec<(Matrix<T>, Matrix<T>)>,
    truncated: bool,
}

impl<T: Scalar> EncoderOutput<T> {
    pub fn states(&self) -> &Matrix<T> {
        &self.states
    }

    /// True at non-padding positions.
    pub fn mask(&self) -> &[bool] {
        &self.key_valid
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }

    /// Set when the source exceeded `max_src_len` and was cut.
    pub fn truncated(&self) -> bool {
        self.truncated
    }
}

fn ln<T: Scalar>(p: &ModelParams<T>, x: &Matrix<T>, n: Norm) -> Matrix<T> {
    layer_norm(x, p.t(n.g), p.t(n.b)).0
}

fn ffn<T: Scalar>(p: &ModelParams<T>, x: &Matrix<T>, f: Ffn) -> Matrix<T> {
    let mut h = x.matmul(p.t(f.w1));
    h.add_row_assign(p.t(f.b1));
    let h = h.map(gelu);
    let mut o = h.matmul(p.t(f.w2));
    o.add_row_assign(p.t(f.b2));
    o
}

fn embed<T: Scalar>(p: &ModelParams<T>, ids: &[u32], start: usize) -> Matrix<T> {
    let d = p.config().d_model;
    let scale = T::of((d as f64).sqrt());
    let table = p.t(p.layout.embed);
    let mut e = Matrix::zeros(ids.len(), d);
    for (i, &id) in ids.iter().enumerate() {
        for (o, &v) in e.row_mut(i).iter_mut().zip(table.row(id as usize)) {
            *o = v * scale;
        }
    }
    e.add(&positional(start, ids.len(), d))
}

/// Runs the encoder over `src_ids`; inputs longer than `max_src_len` are
/// truncated and flagged.
pub fn encode<T: Scalar>(params: &ModelParams<T>, src_ids: &[u32]) -> EncoderOutput<T> {
    let cfg = params.config();
    let lay = &params.layout;
    let truncated = src_ids.len() > cfg.max_src_len;
    let ids = &src_ids[..src_ids.len().min(cfg.max_src_len)];
    let key_valid: Vec<bool> = ids.iter().map(|&t| t != PAD_ID).collect();
    let n = ids.len();
    let seg = [Segment {
        q0: 0,
        qn: n,
        k0: 0,
        kn: n,
        causal: None,
    }];
    let mut x = embed(params, ids, 0);
    let mut a = Matrix::zeros(0, 0);
    for l in &lay.enc {
        let h = ln(params, &x, l.ln1);
        let q = h.matmul(params.t(l.attn.wq));
        let k = h.matmul(params.t(l.attn.wk));
        let v = h.matmul(params.t(l.attn.wv));
        attend(&q, &k, &v, cfg.n_heads, &seg, Some(&key_valid), &mut a, None);
        x = x.add(&a.matmul(params.t(l.attn.wo)));
        let h = ln(params, &x, l.ln2);
        x = x.add(&ffn(params, &h, l.ffn));
    }
    let states = ln(params, &x, lay.enc_ln);
    let cross = lay
        .dec
        .iter()
        .map(|l| (states.matmul(params.t(l.cross.wk)), states.matmul(params.t(l.cross.wv))))
        .collect();
    EncoderOutput {
        states,
        key_valid,
        cross,
        truncated,
    }
}

/// Self-attention keys and values of the tokens consumed so far.
#[derive(Debug, Clone)]
pub struct DecoderCache<T> {
    keys: Vec<Matrix<T>>,
    values: Vec<Matrix<T>>,
    len: usize,
}

impl<T: Scalar> DecoderCache<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let (n, d) = (params.config().n_layers, params.config().d_model);
        DecoderCache {
            keys: vec![Matrix::zeros(0, d); n],
            values: vec![Matrix::zeros(0, d); n],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Feeds `new_tokens[s]` to sequence `s` and returns one logit row per
/// sequence, taken at its last new token. All sequences share `enc`.
pub fn decode_rows<T: Scalar>(params: &ModelParams<T>, enc: &EncoderOutput<T>, caches: &mut [&mut DecoderCache<T>], new_tokens: &[&[u32]]) -> Matrix<T> {
    assert_eq!(caches.len(), new_tokens.len(), "one cache per sequence");
    assert!(new_tokens.iter().all(|t| !t.is_empty()), "every sequence needs a new token");
    let cfg = params.config();
    let lay = &params.layout;
    let d = cfg.d_model;

    let mut x = Matrix::zeros(0, d);
    let mut spans = Vec::with_capacity(new_tokens.len());
    for (c, t) in caches.iter().zip(new_tokens) {
        spans.push((x.rows(), t.len()));
        x.push_rows(&embed(params, t, c.len));
    }
    let cross_segs: Vec<Segment> = spans
        .iter()
        .map(|&(o, n)| Segment {
            q0: o,
            qn: n,
            k0: 0,
            kn: enc.len(),
            causal: None,
        })
        .collect();

    let mut a = Matrix::zeros(0, 0);
    let mut stacked = Matrix::zeros(x.rows(), d);
    for (li, l) in lay.dec.iter().enumerate() {
        let h = ln(params, &x, l.ln1);
        let q = h.matmul(params.t(l.self_attn.wq));
        let k = h.matmul(params.t(l.self_attn.wk));
        let v = h.matmul(params.t(l.self_attn.wv));
        for (s, &(o, n)) in spans.iter().enumerate() {
            let cache = &mut caches[s];
            let past = cache.len;
            cache.keys[li].push_rows(&k.slice_rows(o, o + n));
            cache.values[li].push_rows(&v.slice_rows(o, o + n));
            let seg = [Segment {
                q0: 0,
                qn: n,
                k0: 0,
                kn: past + n,
                causal: Some(past),
            }];
            attend(&q.slice_rows(o, o + n), &cache.keys[li], &cache.values[li], cfg.n_heads, &seg, None, &mut a, None);
            stacked.data_mut()[o * d..(o + n) * d].copy_from_slice(a.data());
        }
        x = x.add(&stacked.matmul(params.t(l.self_attn.wo)));
        let h = ln(params, &x, l.ln2);
        let q = h.matmul(params.t(l.cross.wq));
        let (ck, cv) = &enc.cross[li];
        attend(&q, ck, cv, cfg.n_heads, &cross_segs, Some(&enc.key_valid), &mut a, None);
        x = x.add(&a.matmul(params.t(l.cross.wo)));
        let h = ln(params, &x, l.ln3);
        x = x.add(&ffn(params, &h, l.ffn));
    }
    for (c, t) in caches.iter_mut().zip(new_tokens) {
        c.len += t.len();
    }
    let last: Vec<usize> = spans.iter().map(|&(o, n)| o + n - 1).collect();
    let out = ln(params, &x.select_rows(&last), lay.dec_ln);
    out.matmul_bt(params.t(lay.embed))
}

/// Vocabulary logits for the token following `prefix_ids`.
pub fn decode_step_logits<T: Scalar>(params: &ModelParams<T>, enc: &EncoderOutput<T>, prefix_ids: &[u32]) -> Vec<T> {
    let mut cache = DecoderCache::new(params);
    decode_rows(params, enc, &mut [&mut cache], &[prefix_ids]).into_data()
}

/// Greedy decoding of several prompts against one encoding. Each output
/// excludes its prompt and the terminating EOS; generation also stops after
/// `max_len` tokens or when the prompt plus output reaches `max_tgt_len`.
pub fn greedy_decode_batch<T: Scalar>(
    params: &ModelParams<T>,
    enc: &EncoderOutput<T>,
    prompts: &[Vec<u32>],
    constraints: &[&DecodeConstraint],
    max_len: usize,
) -> Vec<Vec<u32>> {
    let caches = prompts.iter().map(|_| DecoderCache::new(params)).collect();
    greedy_decode_from(params, enc, caches, prompts.to_vec(), constraints, max_len)
}

/// Continues decoding from already filled caches. `feeds[i]` holds the rest
/// of prompt `i` and must not be empty for the sequence to run. Lets callers
/// decode a shared prompt prefix once and fork its cache.
pub fn greedy_decode_from<T: Scalar>(
    params: &ModelParams<T>,
    enc: &EncoderOutput<T>,
    mut caches: Vec<DecoderCache<T>>,
    mut feed: Vec<Vec<u32>>,
    constraints: &[&DecodeConstraint],
    max_len: usize,
) -> Vec<Vec<u32>> {
    assert_eq!(feed.len(), constraints.len(), "one constraint per prompt");
    assert_eq!(feed.len(), caches.len(), "one cache per prompt");
    let cap = params.config().max_tgt_len;
    let prompt_lens: Vec<usize> = caches.iter().zip(&feed).map(|(c, f)| c.len() + f.len()).collect();
    let mut outputs: Vec<Vec<u32>> = vec![Vec::new(); feed.len()];
    let mut active: Vec<usize> = (0..feed.len()).filter(|&i| max_len > 0 && !feed[i].is_empty() && prompt_lens[i] < cap).collect();
    while !active.is_empty() {
        let logits = {
            let mut refs: Vec<&mut DecoderCache<T>> = Vec::with_capacity(active.len());
            let mut it = caches.iter_mut().enumerate();
            for &i in &active {
                refs.push(it.by_ref().find(|(j, _)| *j == i).expect("active index").1);
            }
            let toks: Vec<&[u32]> = active.iter().map(|&i| feed[i].as_slice()).collect();
            decode_rows(params, enc, &mut refs, &toks)
        };
        let mut still = Vec::with_capacity(active.len());
        for (r, &i) in active.iter().enumerate() {
            let next = constraints[i].pick(&outputs[i], logits.row(r));
            if next == EOS_ID {
                continue;
            }
            outputs[i].push(next);
            if outputs[i].len() < max_len && prompt_lens[i] + outputs[i].len() < cap {
                feed[i] = vec![next];
                still.push(i);
            }
        }
        active = still;
    }
    outputs
}

pub fn greedy_decode<T: Scalar>(params: &ModelParams<T>, enc: &EncoderOutput<T>, prompt_ids: &[u32], constraint: &DecodeConstraint, max_len: usize) -> Vec<u32> {
    greedy_decode_batch(params, enc, &[prompt_ids.to_vec()], &[constraint], max_len)
        .pop()
        .expect("one output")
}
