//! One-to-one assignment between predicted and reference entities.
//!
//! The solver maximizes total similarity with the Hungarian method on a
//! zero-padded square matrix; a second pass picks, among optimal
//! assignments, the lexicographically smallest one (pred 0 gets the lowest
//! admissible ref, and so on, with "unmatched" ordered last).

use serde::Serialize;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum AssignmentError {
    #[error("similarity entry ({row}, {col}) = {value} is outside [0, 1] or not finite")]
    OutOfRange { row: usize, col: usize, value: f64 },
    #[error("row {0} has the wrong length")]
    Ragged(usize),
    #[error("brute force limited to min(m,n) <= {max_min} and max(m,n) <= {max_max}, got {m}x{n}")]
    TooLarge {
        m: usize,
        n: usize,
        max_min: usize,
        max_max: usize,
    },
}

/// Pairwise scores, `rows` predicted entities by `cols` reference entities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> SimilarityMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, AssignmentError> {
        assert_eq!(data.len(), rows * cols, "data length must be rows * cols");
        for (idx, &v) in data.iter().enumerate() {
            if !v.is_finite() || v < T::zero() || v > T::one() {
                return Err(AssignmentError::OutOfRange {
                    row: idx / cols.max(1),
                    col: idx % cols.max(1),
                    value: v.to_f64_lossy(),
                });
            }
        }
        Ok(SimilarityMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, AssignmentError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(AssignmentError::Ragged(i));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self, AssignmentError> {
        let data = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    fn tolerance(&self, scale: T) -> T {
        T::epsilon() * T::of((4 * (self.rows + self.cols + 1)) as f64) * scale.max(T::one())
    }
}

/// Binary matching `D`: the set of matched (pred, ref) pairs, sorted by pred.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssignmentMatrix {
    pub rows: usize,
    pub cols: usize,
    pub pairs: Vec<(usize, usize)>,
}

impl AssignmentMatrix {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.pairs.contains(&(i, j))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Sum of matched similarities, accumulated in pred order.
    pub fn total<T: Scalar>(&self, s: &SimilarityMatrix<T>) -> T {
        self.pairs.iter().fold(T::zero(), |acc, &(i, j)| acc + s.get(i, j))
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        let mut d = vec![vec![0u8; self.cols]; self.rows];
        for &(i, j) in &self.pairs {
            d[i][j] = 1;
        }
        d
    }
}

/// Maximum-weight assignment over the given row and column subsets.
/// Returns matched (row, col) pairs with positive similarity and their sum.
fn hungarian_max<T: Scalar>(s: &SimilarityMatrix<T>, rows: &[usize], cols: &[usize]) -> (Vec<(usize, usize)>, T) {
    let n = rows.len().max(cols.len());
    if rows.is_empty() || cols.is_empty() {
        return (Vec::new(), T::zero());
    }
    // 1-indexed potentials / matching, classic shortest augmenting path form.
    let cost = |r: usize, c: usize| -> T {
        if r < rows.len() && c < cols.len() {
            -s.get(rows[r], cols[c])
        } else {
            T::zero()
        }
    };
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs = Vec::new();
    for j in 1..=n {
        let (r, c) = (p[j] - 1, j - 1);
        if r < rows.len() && c < cols.len() && s.get(rows[r], cols[c]) > T::zero() {
            pairs.push((rows[r], cols[c]));
        }
    }
    pairs.sort_unstable();
    let total = pairs.iter().fold(T::zero(), |acc, &(i, j)| acc + s.get(i, j));
    (pairs, total)
}

/// Optimal one-to-one matching maximizing total similarity. Zero-similarity
/// pairs are never matched; ties resolve to the lexicographically smallest
/// assignment.
pub fn optimal_assignment<T: Scalar>(s: &SimilarityMatrix<T>) -> AssignmentMatrix {
    let all_rows: Vec<usize> = (0..s.rows).collect();
    let all_cols: Vec<usize> = (0..s.cols).collect();
    let (_, best) = hungarian_max(s, &all_rows, &all_cols);
    let tol = s.tolerance(best);

    let mut pairs = Vec::new();
    let mut free_cols = all_cols;
    let mut fixed = T::zero();
    for i in 0..s.rows {
        let rest_rows: Vec<usize> = (i + 1..s.rows).collect();
        let mut chosen = None;
        for (pos, &j) in free_cols.iter().enumerate() {
            let sij = s.get(i, j);
            if sij <= T::zero() {
                continue;
            }
            let mut rest_cols = free_cols.clone();
            rest_cols.remove(pos);
            let (_, sub) = hungarian_max(s, &rest_rows, &rest_cols);
            if fixed + sij + sub >= best - tol {
                chosen = Some((pos, j, sij));
                break;
            }
        }
        if let Some((pos, j, sij)) = chosen {
            free_cols.remove(pos);
            fixed += sij;
            pairs.push((i, j));
        }
    }
    AssignmentMatrix {
        rows: s.rows,
        cols: s.cols,
        pairs,
    }
}

pub const BRUTE_FORCE_MAX_MIN: usize = 8;
pub const BRUTE_FORCE_MAX_MAX: usize = 10;

/// Exhaustive search over all injective partial pairings, enumerated in
/// lexicographic order so the first optimum found wins ties.
pub fn brute_force_assignment<T: Scalar>(s: &SimilarityMatrix<T>) -> Result<AssignmentMatrix, AssignmentError> {
    if s.rows.min(s.cols) > BRUTE_FORCE_MAX_MIN || s.rows.max(s.cols) > BRUTE_FORCE_MAX_MAX {
        return Err(AssignmentError::TooLarge {
            m: s.rows,
            n: s.cols,
            max_min: BRUTE_FORCE_MAX_MIN,
            max_max: BRUTE_FORCE_MAX_MAX,
        });
    }
    struct Search<'a, T> {
        s: &'a SimilarityMatrix<T>,
        used: Vec<bool>,
        current: Vec<(usize, usize)>,
        best: Option<(T, Vec<(usize, usize)>)>,
    }
    impl<T: Scalar> Search<'_, T> {
        fn go(&mut self, i: usize, total: T) {
            if i == self.s.rows {
                let tol = self.s.tolerance(total);
                let better = match &self.best {
                    None => true,
                    Some((b, _)) => total > *b + tol,
                };
                if better {
                    self.best = Some((total, self.current.clone()));
                }
                return;
            }
            for j in 0..self.s.cols {
                let sij = self.s.get(i, j);
                if !self.used[j] && sij > T::zero() {
                    self.used[j] = true;
                    self.current.push((i, j));
                    self.go(i + 1, total + sij);
                    self.current.pop();
                    self.used[j] = false;
                }
            }
            self.go(i + 1, total);
        }
    }
    let mut search = Search {
        s,
        used: vec![false; s.cols],
        current: Vec::new(),
        best: None,
    };
    search.go(0, T::zero());
    let pairs = search.best.map(|(_, p)| p).unwrap_or_default();
    Ok(AssignmentMatrix {
        rows: s.rows,
        cols: s.cols,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sm(rows: &[&[f64]]) -> SimilarityMatrix<f64> {
        SimilarityMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn two_by_two() {
        let s = sm(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let a = optimal_assignment(&s);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert!((a.total(&s) - 1.7).abs() < 1e-12);
    }

    #[test]
    fn zero_pairs_unmatched() {
        let s = sm(&[&[0.0]]);
        assert!(optimal_assignment(&s).is_empty());
        assert!(brute_force_assignment(&s).unwrap().is_empty());
    }

    #[test]
    fn ties_break_lexicographically() {
        let s = sm(&[&[1.0, 1.0], &[1.0, 1.0]]);
        assert_eq!(optimal_assignment(&s).pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(brute_force_assignment(&s).unwrap().pairs, vec![(0, 0), (1, 1)]);
        let s = sm(&[&[0.5]]);
        assert_eq!(brute_force_assignment(&s).unwrap().pairs, vec![(0, 0)]);
    }

    #[test]
    fn rectangular_and_empty() {
        let s = sm(&[&[0.3, 0.9, 0.4]]);
        assert_eq!(optimal_assignment(&s).pairs, vec![(0, 1)]);
        let s = SimilarityMatrix::<f64>::new(0, 3, vec![]).unwrap();
        assert!(optimal_assignment(&s).is_empty());
        let s = SimilarityMatrix::<f64>::new(2, 0, vec![]).unwrap();
        assert!(optimal_assignment(&s).is_empty());
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(SimilarityMatrix::from_rows(&[vec![1.5]]).is_err());
        assert!(SimilarityMatrix::from_rows(&[vec![f64::NAN]]).is_err());
        assert!(SimilarityMatrix::from_rows(&[vec![0.1, 0.2], vec![0.3]]).is_err());
    }

    #[test]
    fn brute_force_bound() {
        let s = SimilarityMatrix::<f64>::from_fn(9, 9, |_, _| 0.5).unwrap();
        assert!(matches!(brute_force_assignment(&s), Err(AssignmentError::TooLarge { .. })));
    }

    #[test]
    fn three_by_three_beats_every_permutation() {
        let s = sm(&[&[0.1, 0.7, 0.3], &[0.6, 0.2, 0.9], &[0.4, 0.8, 0.5]]);
        let best = brute_force_assignment(&s).unwrap().total(&s);
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for p in perms {
            let t: f64 = (0..3).map(|i| s.get(i, p[i])).sum();
            assert!(best >= t - 1e-12);
        }
    }

    #[test]
    fn single_precision_solver() {
        let s = SimilarityMatrix::<f32>::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        assert_eq!(optimal_assignment(&s).pairs, vec![(0, 0), (1, 1)]);
    }

    fn matrix_strategy() -> impl Strategy<Value = SimilarityMatrix<f64>> {
        (0usize..=6, 0usize..=6).prop_flat_map(|(m, n)| {
            proptest::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0], m * n)
                .prop_map(move |d| SimilarityMatrix::new(m, n, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn solver_matches_brute_force(s in matrix_strategy()) {
            let a = optimal_assignment(&s);
            let b = brute_force_assignment(&s).unwrap();
            prop_assert!((a.total(&s) - b.total(&s)).abs() <= 1e-12);
            let mut rows = vec![0; s.rows()];
            let mut cols = vec![0; s.cols()];
            for &(i, j) in &a.pairs {
                rows[i] += 1;
                cols[j] += 1;
                prop_assert!(s.get(i, j) > 0.0);
            }
            prop_assert!(rows.iter().chain(&cols).all(|&c| c <= 1));
        }
    }
}
