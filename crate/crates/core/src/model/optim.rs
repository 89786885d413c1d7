use serde::{Deserialize, Serialize};

use super::forward::{run_batch, Batch, LossOutput};
use super::matrix::Matrix;
use super::{ModelError, ModelParams};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps over which the learning rate ramps linearly from lr/warmup to lr.
    pub warmup_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 100,
        }
    }
}

impl AdamConfig {
    /// Learning rate for the given 1-based step.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.lr
        } else {
            self.lr * step as f64 / self.warmup_steps as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros: Vec<Matrix<T>> = params.tensors().iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Applied { lr: f64 },
    /// A gradient entry was NaN or infinite; nothing was changed.
    Skipped,
}

/// One AdamW update. Weight decay is decoupled and applied only to weight
/// matrices, not to the 1-row gain and bias vectors.
pub fn apply_gradients<T: Scalar>(params: &mut ModelParams<T>, grads: &[Matrix<T>], state: &mut AdamState<T>, cfg: &AdamConfig) -> StepOutcome {
    assert_eq!(grads.len(), params.tensors().len(), "one gradient per tensor");
    if !grads.iter().all(Matrix::all_finite) {
        return StepOutcome::Skipped;
    }
    state.step += 1;
    let t = state.step;
    let lr = cfg.lr_at(t);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let bc1 = T::of(1.0 - cfg.beta1.powi(t.min(i32::MAX as u64) as i32));
    let bc2 = T::of(1.0 - cfg.beta2.powi(t.min(i32::MAX as u64) as i32));
    let (lr_t, eps, wd) = (T::of(lr), T::of(cfg.eps), T::of(cfg.weight_decay));
    for (k, p) in params.tensors_mut().iter_mut().enumerate() {
        let decay = p.rows() > 1;
        let g = grads[k].data();
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            if decay {
                *w -= lr_t * wd * *w;
            }
            *w -= lr_t * mhat / (vhat.sqrt() + eps);
        }
    }
    StepOutcome::Applied { lr }
}

#[derive(Debug, Clone)]
pub struct StepReport<T> {
    pub loss: LossOutput<T>,
    pub outcome: StepOutcome,
}

/// Computes loss and gradients for `batch` and applies one update. Dropout
/// is drawn from `rng` when the config enables it.
pub fn train_step<T: Scalar>(
    params: &mut ModelParams<T>,
    batch: &Batch,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
    rng: &mut dyn rand::RngCore,
) -> Result<StepReport<T>, ModelError> {
    let dropout = (params.config().dropout_rate > 0.0).then_some(rng);
    let mut loss = run_batch(params, batch, dropout, true)?;
    let grads = loss.grads.take().expect("gradients requested");
    let outcome = if loss.total.is_finite() {
        apply_gradients(params, &grads, state, cfg)
    } else {
        StepOutcome::Skipped
    };
    Ok(StepReport { loss, outcome })
}
