use serde::{Deserialize, Serialize};

use super::MetricError;

/// One system's corpus scores under the three pairing modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemScores {
    pub system: String,
    pub exact: f64,
    pub approx: f64,
    pub multiprop: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub pearson: f64,
    pub spearman: f64,
    /// Set when a side has zero variance; both coefficients are then
    /// reported as 1.0 by convention.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    /// (multiprop, exact) per system.
    pub multiprop_vs_exact_points: Vec<(f64, f64)>,
    /// (multiprop, approx) per system.
    pub multiprop_vs_approx_points: Vec<(f64, f64)>,
    pub multiprop_vs_exact: Correlation,
    pub multiprop_vs_approx: Correlation,
}

/// Pearson coefficient, or `None` when either side has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman coefficient as the Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    pearson(&ranks(xs), &ranks(ys))
}

fn correlate(xs: &[f64], ys: &[f64]) -> Correlation {
    match (pearson(xs, ys), spearman(xs, ys)) {
        (Some(p), Some(s)) => Correlation {
            pearson: p,
            spearman: s,
            degenerate: false,
        },
        _ => Correlation {
            pearson: 1.0,
            spearman: 1.0,
            degenerate: true,
        },
    }
}

/// Correlates MultiProp scores against ExactName and ApproxName scores
/// across systems.
pub fn metric_correlation(systems: &[SystemScores]) -> Result<CorrelationSummary, MetricError> {
    if systems.len() < 2 {
        return Err(MetricError::TooFewPoints {
            need: 2,
            got: systems.len(),
        });
    }
    let mp: Vec<f64> = systems.iter().map(|s| s.multiprop).collect();
    let ex: Vec<f64> = systems.iter().map(|s| s.exact).collect();
    let ap: Vec<f64> = systems.iter().map(|s| s.approx).collect();
    Ok(CorrelationSummary {
        multiprop_vs_exact_points: mp.iter().copied().zip(ex.iter().copied()).collect(),
        multiprop_vs_approx_points: mp.iter().copied().zip(ap.iter().copied()).collect(),
        multiprop_vs_exact: correlate(&mp, &ex),
        multiprop_vs_approx: correlate(&mp, &ap),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(name: &str, e: f64, a: f64, m: f64) -> SystemScores {
        SystemScores {
            system: name.into(),
            exact: e,
            approx: a,
            multiprop: m,
        }
    }

    #[test]
    fn degenerate_ties_flagged() {
        let s = metric_correlation(&[sys("a", 0.5, 0.5, 0.5), sys("b", 0.5, 0.5, 0.5)]).unwrap();
        assert!(s.multiprop_vs_exact.degenerate);
        assert_eq!(s.multiprop_vs_exact.spearman, 1.0);
    }

    #[test]
    fn increasing_together_is_positive() {
        let s = metric_correlation(&[sys("a", 0.1, 0.2, 0.3), sys("b", 0.4, 0.5, 0.6), sys("c", 0.5, 0.9, 0.7)]).unwrap();
        assert!(s.multiprop_vs_exact.pearson > 0.0);
        assert_eq!(s.multiprop_vs_approx.spearman, 1.0);
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            metric_correlation(&[sys("a", 0.1, 0.1, 0.1)]),
            Err(MetricError::TooFewPoints { need: 2, got: 1 })
        ));
    }

    #[test]
    fn spearman_matches_rank_difference_formula() {
        // no ties: rho = 1 - 6 Σd² / (n(n²-1))
        let x = [0.12, 0.55, 0.31, 0.9, 0.47];
        let y = [0.2, 0.35, 0.5, 0.8, 0.1];
        let rx = [1.0, 4.0, 2.0, 5.0, 3.0];
        let ry = [2.0, 3.0, 4.0, 5.0, 1.0];
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
        let want = 1.0 - 6.0 * d2 / (5.0 * 24.0);
        assert!((spearman(&x, &y).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn tied_ranks_average() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
