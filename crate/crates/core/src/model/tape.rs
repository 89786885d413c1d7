//! Reverse-mode automatic differentiation over a linear tape of matrix ops.

use super::attention::{attend, attend_backward, Segment};
use super::matrix::{gelu, gelu_grad, layer_norm, masked_softmax, Matrix};
use crate::scalar::Scalar;

pub(crate) type Var = usize;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        g: Var,
        b: Var,
        means: Vec<T>,
        rstds: Vec<T>,
    },
    Embed {
        table: Var,
        ids: Vec<u32>,
        scale: T,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segs: Vec<Segment>,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<u32>>,
        probs: Matrix<T>,
    },
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
}

pub(crate) struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v].value
    }

    pub fn leaf(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_bt(self.value(b));
        self.push(v, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_row_assign(self.value(bias));
        self.push(v, Op::AddRow(a, bias))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Var {
        let (v, means, rstds) = layer_norm(self.value(x), self.value(g), self.value(b));
        self.push(v, Op::LayerNorm { x, g, b, means, rstds })
    }

    pub fn embed(&mut self, table: Var, ids: &[u32], scale: T) -> Var {
        let t = self.value(table);
        let mut v = Matrix::zeros(ids.len(), t.cols());
        for (i, &id) in ids.iter().enumerate() {
            for (o, &e) in v.row_mut(i).iter_mut().zip(t.row(id as usize)) {
                *o = e * scale;
            }
        }
        self.push(
            v,
            Op::Embed {
                table,
                ids: ids.to_vec(),
                scale,
            },
        )
    }

    /// `mask` holds 0 or 1/(1-rate) per element.
    pub fn dropout(&mut self, x: Var, mask: Vec<T>) -> Var {
        let mut v = self.value(x).clone();
        for (a, &m) in v.data_mut().iter_mut().zip(&mask) {
            *a *= m;
        }
        self.push(v, Op::Dropout { x, mask })
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, segs: Vec<Segment>, key_valid: Option<&[bool]>) -> Var {
        let mut out = Matrix::zeros(0, 0);
        let mut probs = Vec::new();
        attend(self.value(q), self.value(k), self.value(v), heads, &segs, key_valid, &mut out, Some(&mut probs));
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                segs,
                probs,
            },
        )
    }

    /// Summed token cross-entropy; rows with `None` targets contribute
    /// nothing. Returns the 1×1 loss node and the per-row losses.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<Option<u32>>) -> (Var, Vec<T>) {
        let l = self.value(logits);
        assert_eq!(l.rows(), targets.len(), "one target per logit row");
        let mut probs = l.clone();
        let mut row_losses = vec![T::zero(); targets.len()];
        let mut total = T::zero();
        for (i, t) in targets.iter().enumerate() {
            if let Some(t) = t {
                let row = probs.row_mut(i);
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
                let loss = lse - row[*t as usize];
                masked_softmax(row, |_| true);
                row_losses[i] = loss;
                total += loss;
            }
        }
        let node = self.push(Matrix::from_vec(1, 1, vec![total]), Op::CrossEntropy { logits, targets, probs });
        (node, row_losses)
    }

    /// Gradients of the 1×1 node `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Vec<Option<Matrix<T>>> {
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Matrix::from_vec(1, 1, vec![T::one()]));
        fn acc<T: Scalar>(grads: &mut [Option<Matrix<T>>], i: Var, g: Matrix<T>) {
            match &mut grads[i] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        for n in (0..=root).rev() {
            let Some(g) = grads[n].take() else { continue };
            match &self.nodes[n].op {
                Op::Leaf => {
                    grads[n] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_bt(self.value(*b));
                    let db = self.value(*a).matmul_at(&g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulBt(a, b) => {
                    // y = a bᵀ: da = g b, db = gᵀ a
                    let da = g.matmul(self.value(*b));
                    let db = g.matmul_at(self.value(*a));
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, bias) => {
                    let mut db = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &x) in db.data_mut().iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *bias, db);
                    acc(&mut grads, *a, g);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut d = g;
                    for (o, &xv) in d.data_mut().iter_mut().zip(x.data()) {
                        *o *= gelu_grad(xv);
                    }
                    acc(&mut grads, *a, d);
                }
                Op::LayerNorm { x, g: gv, b, means, rstds } => {
                    let xv = self.value(*x);
                    let gamma = self.value(*gv);
                    let dcols = xv.cols();
                    let dn = T::of(dcols as f64);
                    let mut dx = Matrix::zeros(xv.rows(), dcols);
                    let mut dg = Matrix::zeros(1, dcols);
                    let mut db = Matrix::zeros(1, dcols);
                    let mut xhat = vec![T::zero(); dcols];
                    let mut dxhat = vec![T::zero(); dcols];
                    for i in 0..xv.rows() {
                        let (mean, rstd) = (means[i], rstds[i]);
                        let gi = g.row(i);
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..dcols {
                            xhat[j] = (xv.get(i, j) - mean) * rstd;
                            dxhat[j] = gi[j] * gamma.data()[j];
                            dg.data_mut()[j] += gi[j] * xhat[j];
                            db.data_mut()[j] += gi[j];
                            s1 += dxhat[j];
                            s2 += dxhat[j] * xhat[j];
                        }
                        let row = dx.row_mut(i);
                        for j in 0..dcols {
                            row[j] = rstd * (dxhat[j] - s1 / dn - xhat[j] * s2 / dn);
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gv, dg);
                    acc(&mut grads, *b, db);
                }
                Op::Embed { table, ids, scale } => {
                    let t = self.value(*table);
                    let mut dt = Matrix::zeros(t.rows(), t.cols());
                    for (i, &id) in ids.iter().enumerate() {
                        for (o, &x) in dt.row_mut(id as usize).iter_mut().zip(g.row(i)) {
                            *o += x * *scale;
                        }
                    }
                    acc(&mut grads, *table, dt);
                }
                Op::Dropout { x, mask } => {
                    let mut d = g;
                    for (o, &m) in d.data_mut().iter_mut().zip(mask) {
                        *o *= m;
                    }
                    acc(&mut grads, *x, d);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    segs,
                    probs,
                } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let mut dq = Matrix::zeros(qv.rows(), qv.cols());
                    let mut dk = Matrix::zeros(kv.rows(), kv.cols());
                    let mut dv = Matrix::zeros(vv.rows(), vv.cols());
                    attend_backward(qv, kv, vv, *heads, segs, probs, &g, &mut dq, &mut dk, &mut dv);
                    acc(&mut grads, *q, dq);
                    acc(&mut grads, *k, dk);
                    acc(&mut grads, *v, dv);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let scale = g.get(0, 0);
                    let mut d = Matrix::zeros(probs.rows(), probs.cols());
                    for (i, t) in targets.iter().enumerate() {
                        if let Some(t) = t {
                            let row = d.row_mut(i);
                            row.copy_from_slice(probs.row(i));
                            row[*t as usize] -= T::one();
                            row.iter_mut().for_each(|x| *x *= scale);
                        }
                    }
                    acc(&mut grads, *logits, d);
                }
            }
        }
        grads
    }
}
