//! Multi-head scaled dot-product attention over row segments of stacked
//! query/key/value matrices.

use super::matrix::{dot, masked_softmax, Matrix};
use crate::scalar::Scalar;

/// Query rows `q0..q0+qn` attend to key rows `k0..k0+kn`. With
/// `causal = Some(o)`, query `i` sees keys `j <= o + i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Segment {
    pub q0: usize,
    pub qn: usize,
    pub k0: usize,
    pub kn: usize,
    pub causal: Option<usize>,
}

/// Writes attention output into `out` (zeroed here). When `probs` is given,
/// the per-segment, per-head probability rows are appended to it.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attend<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    heads: usize,
    segs: &[Segment],
    key_valid: Option<&[bool]>,
    out: &mut Matrix<T>,
    mut probs: Option<&mut Vec<T>>,
) {
    let d = q.cols();
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    *out = Matrix::zeros(q.rows(), d);
    let mut row = Vec::new();
    for s in segs {
        for h in 0..heads {
            let hs = h * dh..(h + 1) * dh;
            for i in 0..s.qn {
                let allowed = |j: usize| s.causal.is_none_or(|o| j <= o + i) && key_valid.is_none_or(|kv| kv[s.k0 + j]);
                let qi = &q.row(s.q0 + i)[hs.clone()];
                row.clear();
                row.extend((0..s.kn).map(|j| if allowed(j) { dot(qi, &k.row(s.k0 + j)[hs.clone()]) * scale } else { T::zero() }));
                if (0..s.kn).any(allowed) {
                    masked_softmax(&mut row, allowed);
                } else {
                    row.iter_mut().for_each(|p| *p = T::zero());
                }
                let o = &mut out.row_mut(s.q0 + i)[hs.clone()];
                for (j, &p) in row.iter().enumerate() {
                    if p != T::zero() {
                        for (a, &b) in o.iter_mut().zip(&v.row(s.k0 + j)[hs.clone()]) {
                            *a += p * b;
                        }
                    }
                }
                if let Some(buf) = probs.as_deref_mut() {
                    buf.extend_from_slice(&row);
                }
            }
        }
    }
}

/// Accumulates gradients of `attend` into `dq`, `dk`, `dv`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attend_backward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    heads: usize,
    segs: &[Segment],
    probs: &[T],
    dout: &Matrix<T>,
    dq: &mut Matrix<T>,
    dk: &mut Matrix<T>,
    dv: &mut Matrix<T>,
) {
    let d = q.cols();
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut at = 0;
    let mut ds = Vec::new();
    for s in segs {
        for h in 0..heads {
            let hs = h * dh..(h + 1) * dh;
            for i in 0..s.qn {
                let p = &probs[at..at + s.kn];
                at += s.kn;
                let go = &dout.row(s.q0 + i)[hs.clone()];
                ds.clear();
                let mut total = T::zero();
                for j in 0..s.kn {
                    let dp = if p[j] != T::zero() { dot(go, &v.row(s.k0 + j)[hs.clone()]) } else { T::zero() };
                    total += p[j] * dp;
                    ds.push(dp);
                }
                for j in 0..s.kn {
                    if p[j] == T::zero() {
                        continue;
                    }
                    let g = p[j] * (ds[j] - total) * scale;
                    let kj = s.k0 + j;
                    for (a, &b) in dv.row_mut(kj)[hs.clone()].iter_mut().zip(go) {
                        *a += p[j] * b;
                    }
                    for (a, &b) in dq.row_mut(s.q0 + i)[hs.clone()].iter_mut().zip(&k.row(kj)[hs.clone()]) {
                        *a += g * b;
                    }
                    for (a, &b) in dk.row_mut(kj)[hs.clone()].iter_mut().zip(&q.row(s.q0 + i)[hs.clone()]) {
                        *a += g * b;
                    }
                }
            }
        }
    }
}
