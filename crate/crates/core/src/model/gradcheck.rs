use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::forward::{batch_loss, batch_loss_value, Batch};
use super::matrix::Matrix;
use super::{ModelError, ModelParams};
use crate::scalar::Scalar;

/// Central-difference formula used for the numeric derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stencil {
    /// (f(x+h) - f(x-h)) / 2h, truncation error O(h²).
    ThreePoint,
    /// (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h, truncation error O(h⁴).
    FivePoint,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub stencil: Stencil,
    /// Coordinates to sample; all of them when the model is smaller.
    pub coordinates: usize,
    pub seed: u64,
    /// Lower bound on the relative-error denominator, so coordinates whose
    /// true gradient is ~0 are judged on absolute error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-3,
            stencil: Stencil::FivePoint,
            coordinates: 256,
            seed: 0,
            floor: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Compares backpropagated gradients with central finite differences.
pub fn grad_check<T: Scalar>(params: &ModelParams<T>, batch: &Batch, opts: &GradCheckOptions) -> Result<GradCheckReport, ModelError> {
    grad_check_with(params, batch, opts, |p, b| Ok(batch_loss(p, b)?.grads.expect("gradients")))
}

/// As [`grad_check`], with the analytic gradients supplied by `analytic`.
pub fn grad_check_with<T, F>(params: &ModelParams<T>, batch: &Batch, opts: &GradCheckOptions, analytic: F) -> Result<GradCheckReport, ModelError>
where
    T: Scalar,
    F: Fn(&ModelParams<T>, &Batch) -> Result<Vec<Matrix<T>>, ModelError>,
{
    let grads = analytic(params, batch)?;
    let sizes: Vec<usize> = params.tensors().iter().map(Matrix::len).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut flat: Vec<usize> = if opts.coordinates >= total {
        (0..total).collect()
    } else {
        sample(&mut rng, total, opts.coordinates).into_vec()
    };
    flat.sort_unstable();

    let mut work = params.clone();
    let eps = T::of(opts.epsilon);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates: flat.len(),
        worst: None,
    };
    for f in flat {
        let (mut t, mut i) = (0, f);
        while i >= sizes[t] {
            i -= sizes[t];
            t += 1;
        }
        let orig = work.tensors()[t].data()[i];
        let mut at = |k: f64| -> Result<f64, ModelError> {
            work.tensors_mut()[t].data_mut()[i] = orig + T::of(k) * eps;
            let l = batch_loss_value(&work, batch)?.total.to_f64_lossy();
            work.tensors_mut()[t].data_mut()[i] = orig;
            Ok(l)
        };
        let h = opts.epsilon;
        let numeric = match opts.stencil {
            Stencil::ThreePoint => (at(1.0)? - at(-1.0)?) / (2.0 * h),
            Stencil::FivePoint => (-at(2.0)? + 8.0 * at(1.0)? - 8.0 * at(-1.0)? + at(-2.0)?) / (12.0 * h),
        };
        let exact = grads[t].data()[i].to_f64_lossy();
        let denom = exact.abs().max(numeric.abs()).max(opts.floor);
        let rel = (exact - numeric).abs() / denom;
        if rel > report.max_rel_error || rel.is_nan() {
            report.max_rel_error = rel;
            report.worst = Some((params.names()[t].clone(), i));
        }
    }
    Ok(report)
}
