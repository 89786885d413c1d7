use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::DocumentRecord;

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
}

/// Part sizes by the largest-remainder rule; ties go to the earlier part.
fn part_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

/// Deterministic shuffled partition into (train, dev, test). Each part keeps
/// the input order of its members.
pub fn split(
    records: &[DocumentRecord],
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Vec<DocumentRecord>, Vec<DocumentRecord>, Vec<DocumentRecord>), SplitError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(SplitError::BadRatios(ratios));
    }
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [a, b, _] = part_sizes(records.len(), ratios);
    let mut parts = [idx[..a].to_vec(), idx[a..a + b].to_vec(), idx[a + b..].to_vec()];
    let [train, dev, test] = parts.each_mut().map(|p| {
        p.sort_unstable();
        p.iter().map(|&i| records[i].clone()).collect::<Vec<_>>()
    });
    Ok((train, dev, test))
}
