//! A small pre-norm transformer encoder-decoder trained from scratch, with
//! greedy and constrained decoding.

mod attention;
mod checkpoint;
mod config;
mod constraint;
mod forward;
mod gradcheck;
mod infer;
mod matrix;
mod optim;
mod params;
mod tape;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, TensorInfo};
pub use config::ModelConfig;
pub use constraint::{AllowedSet, DecodeConstraint};
pub use forward::{batch_loss, batch_loss_value, Batch, Example, LossOutput};
pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport, Stencil};
pub use infer::{decode_rows, decode_step_logits, encode, greedy_decode, greedy_decode_batch, greedy_decode_from, DecoderCache, EncoderOutput};
pub use matrix::Matrix;
pub use optim::{apply_gradients, train_step, AdamConfig, AdamState, StepOutcome, StepReport};
pub use params::ModelParams;

/// Fixed ids shared with the vocabulary's reserved block.
pub const PAD_ID: u32 = 0;
pub const EOS_ID: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("example {0} has no non-padding target token")]
    AllPadTarget(usize),
    #[error("invalid example: {0}")]
    InvalidExample(String),
    #[error("token id outside the vocabulary")]
    TokenOutOfRange,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("vocabulary hash mismatch: expected {expected}, found {found}")]
    VocabMismatch { expected: String, found: String },
    #[error("{0}")]
    Io(String),
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::scalar::Scalar;
    use crate::schema::{compile_schema, SchemaDef};
    use crate::textproc::{build_vocab, Vocabulary};

    fn cfg(v: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: v,
            d_model: 16,
            n_heads: 2,
            n_layers: 2,
            ffn_dim: 32,
            max_src_len: 32,
            max_tgt_len: 32,
            dropout_rate: 0.0,
            seed: 3,
        }
    }

    fn ids(rng: &mut ChaCha8Rng, n: usize, v: u32) -> Vec<u32> {
        (0..n).map(|_| rng.gen_range(4..v)).collect()
    }

    fn random_batch(seed: u64, v: u32, n: usize) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Batch::new();
        let srcs: Vec<Vec<u32>> = (0..2).map(|_| ids(&mut rng, 7, v)).collect();
        for i in 0..n {
            let mut t = ids(&mut rng, 3, v);
            t.push(EOS_ID);
            let p = ids(&mut rng, 2, v);
            b.push(i % 3, &srcs[i % 2], p, t);
        }
        b
    }

    #[test]
    fn reserved_ids_agree_with_vocabulary() {
        let s = compile_schema(&SchemaDef::sixgtech()).unwrap();
        let v: Vocabulary = build_vocab(["a b"], &s, 1).unwrap();
        assert_eq!(v.pad_id(), PAD_ID);
        assert_eq!(v.eos_id(), EOS_ID);
    }

    #[test]
    fn inference_logits_match_training_graph() {
        let p = ModelParams::<f64>::init(&cfg(30)).unwrap();
        let src = vec![5, 6, 7, 8, 9];
        let prefix = vec![10, 11, 12, 13];
        // a one-token target's loss is lse(logits) - logit[target]
        let enc = encode(&p, &src);
        let logits = decode_step_logits(&p, &enc, &prefix);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        for target in [4u32, 17, 29] {
            let mut b = Batch::new();
            b.push(0, &src, prefix.clone(), vec![target]);
            let loss = batch_loss_value(&p, &b).unwrap().total;
            assert_eq!(loss, lse - logits[target as usize]);
        }
    }

    #[test]
    fn incremental_decoding_matches_full_prefix() {
        let p = ModelParams::<f64>::init(&cfg(30)).unwrap();
        let enc = encode(&p, &[5, 6, 7, 8]);
        let mut cache = DecoderCache::new(&p);
        let seq = [9u32, 10, 11, 12, 13];
        let mut step = decode_rows(&p, &enc, &mut [&mut cache], &[&seq[..2]]);
        for n in 3..=seq.len() {
            step = decode_rows(&p, &enc, &mut [&mut cache], &[&seq[n - 1..n]]);
        }
        assert_eq!(step.row(0), decode_step_logits(&p, &enc, &seq).as_slice());
    }

    #[test]
    fn softmax_normalized_and_deterministic() {
        let p = ModelParams::<f64>::init(&cfg(30)).unwrap();
        let enc = encode(&p, &[5, 6, 7]);
        let a = decode_step_logits(&p, &enc, &[4, 8]);
        let b = decode_step_logits(&p, &enc, &[4, 8]);
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = a.iter().map(|l| (l - max).exp()).sum();
        let s: f64 = a.iter().map(|l| (l - max).exp() / z).sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert_ne!(a, decode_step_logits(&p, &enc, &[4, 9]));
    }

    #[test]
    fn trailing_pads_are_ignored() {
        let p = ModelParams::<f64>::init(&cfg(30)).unwrap();
        let plain = encode(&p, &[5, 6, 7]);
        let padded = encode(&p, &[5, 6, 7, PAD_ID, PAD_ID]);
        assert_eq!(padded.states().rows(), 5);
        assert_eq!(padded.mask(), &[true, true, true, false, false]);
        for i in 0..3 {
            assert_eq!(plain.states().row(i), padded.states().row(i));
        }
        assert_eq!(decode_step_logits(&p, &plain, &[9, 10]), decode_step_logits(&p, &padded, &[9, 10]));
    }

    #[test]
    fn overlong_source_truncated_with_flag() {
        let p = ModelParams::<f64>::init(&cfg(30)).unwrap();
        let long: Vec<u32> = (0..40).map(|i| 4 + i % 20).collect();
        let e = encode(&p, &long);
        assert!(e.truncated());
        assert_eq!(e.len(), 32);
        assert!(!encode(&p, &long[..10]).truncated());
    }

    #[test]
    fn batched_decoding_matches_single() {
        let p = ModelParams::<f64>::init(&cfg(30)).unwrap();
        let enc = encode(&p, &[5, 6, 7, 8, 9, 10]);
        let prompts = vec![vec![4u32], vec![11, 12, 13], vec![20, 21]];
        let c = DecodeConstraint::Unrestricted;
        let batched = greedy_decode_batch(&p, &enc, &prompts, &[&c, &c, &c], 10);
        for (pr, out) in prompts.iter().zip(&batched) {
            assert_eq!(&greedy_decode(&p, &enc, pr, &c, 10), out);
            assert!(out.len() <= 10);
        }
        assert!(greedy_decode(&p, &enc, &[4], &c, 1).len() <= 1);
    }

    #[test]
    fn loss_of_random_logits_is_about_ln_v() {
        // near-zero weights give near-uniform logits
        let mut p = ModelParams::<f64>::init(&cfg(200)).unwrap();
        let embed = p.layout.embed;
        p.tensors_mut()[embed] = p.tensors()[embed].scale(1e-3);
        let b = random_batch(1, 200, 6);
        let out = batch_loss_value(&p, &b).unwrap();
        let per = out.total / out.target_tokens as f64;
        let want = (200f64).ln();
        assert!((per - want).abs() / want < 0.05, "{per} vs {want}");
    }

    #[test]
    fn duplicated_batch_doubles_loss_and_groups_add_up() {
        let p = ModelParams::<f64>::init(&cfg(30)).unwrap();
        let b = random_batch(2, 30, 5);
        let one = batch_loss_value(&p, &b).unwrap();
        let mut two = b.clone();
        two.extend(&b);
        let both = batch_loss_value(&p, &two).unwrap();
        assert!((both.total - 2.0 * one.total).abs() < 1e-9);
        let sum: f64 = one.per_group.values().sum();
        assert!((sum - one.total).abs() < 1e-9);
        assert_eq!(one.per_group.len(), 3);
    }

    #[test]
    fn batch_errors() {
        let p = ModelParams::<f64>::init(&cfg(30)).unwrap();
        assert_eq!(batch_loss(&p, &Batch::new()).unwrap_err(), ModelError::EmptyBatch);
        let mut b = Batch::new();
        b.push(0, &[5, 6], vec![4], vec![PAD_ID, PAD_ID]);
        assert_eq!(batch_loss(&p, &b).unwrap_err(), ModelError::AllPadTarget(0));
    }

    fn tiny_batch() -> Batch {
        let mut b = Batch::new();
        b.push(0, &[5, 6, 7, 8, PAD_ID], vec![4], vec![9, 10, EOS_ID]);
        b.push(1, &[5, 6, 7, 8, PAD_ID], vec![11, 12], vec![13, EOS_ID]);
        b.push(2, &[14, 15, 16], vec![17], vec![18, 19, PAD_ID, EOS_ID]);
        b
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = ModelParams::<f64>::init(&ModelConfig::tiny(24)).unwrap();
        assert!(p.param_count() <= 10_000);
        let r = grad_check(
            &p,
            &tiny_batch(),
            &GradCheckOptions {
                coordinates: 400,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.coordinates >= 200);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_detected() {
        let p = ModelParams::<f64>::init(&ModelConfig::tiny(24)).unwrap();
        let r = grad_check_with(&p, &tiny_batch(), &GradCheckOptions::default(), |p, b| {
            let mut g = batch_loss(p, b)?.grads.unwrap();
            for m in &mut g {
                *m = m.scale(1.05);
            }
            Ok(g)
        })
        .unwrap();
        assert!(r.max_rel_error > 1e-2, "{r:?}");
    }

    fn sweep<T: Scalar>(eps: &[f64], floor: f64) -> Vec<f64> {
        let p = ModelParams::<T>::init(&ModelConfig::tiny(24)).unwrap();
        eps.iter()
            .map(|&e| {
                let opts = GradCheckOptions {
                    epsilon: e,
                    stencil: Stencil::ThreePoint,
                    floor,
                    ..Default::default()
                };
                grad_check(&p, &tiny_batch(), &opts).unwrap().max_rel_error
            })
            .collect()
    }

    fn interior_minimum(errs: &[f64]) -> bool {
        let imin = (0..errs.len()).fold(0, |a, i| if errs[i] < errs[a] { i } else { a });
        imin > 0 && imin < errs.len() - 1
    }

    #[test]
    fn epsilon_sweep_is_v_shaped() {
        // truncation error dominates at large steps, rounding error at small
        let errs = sweep::<f64>(&[1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10], 1e-7);
        assert!(interior_minimum(&errs), "{errs:?}");
        assert!(errs[1] > errs[3], "{errs:?}");
        let errs = sweep::<f32>(&[1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5], 1e-3);
        assert!(interior_minimum(&errs), "{errs:?}");
    }

    #[test]
    fn zero_grad_or_zero_lr_leaves_params() {
        let mut p = ModelParams::<f64>::init(&cfg(30)).unwrap();
        let before = p.clone();
        let zeros: Vec<Matrix<f64>> = p.tensors().iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect();
        let mut st = AdamState::new(&p);
        let hp = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        assert!(matches!(apply_gradients(&mut p, &zeros, &mut st, &hp), StepOutcome::Applied { .. }));
        assert_eq!(p.tensors(), before.tensors());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hp = AdamConfig {
            lr: 0.0,
            ..Default::default()
        };
        train_step(&mut p, &random_batch(3, 30, 4), &mut st, &hp, &mut rng).unwrap();
        assert_eq!(p.tensors(), before.tensors());
    }

    #[test]
    fn non_finite_gradient_skips_step() {
        let mut p = ModelParams::<f64>::init(&cfg(30)).unwrap();
        let before = p.clone();
        let mut g: Vec<Matrix<f64>> = p.tensors().iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect();
        g[0].set(0, 0, f64::NAN);
        let mut st = AdamState::new(&p);
        assert_eq!(apply_gradients(&mut p, &g, &mut st, &AdamConfig::default()), StepOutcome::Skipped);
        assert_eq!(st.step(), 0);
        assert_eq!(p.tensors(), before.tensors());
    }

    #[test]
    fn memorization_loss_decreases() {
        let mut p = ModelParams::<f64>::init(&cfg(40)).unwrap();
        let b = random_batch(4, 40, 10);
        let mut st = AdamState::new(&p);
        let hp = AdamConfig {
            lr: 3e-3,
            warmup_steps: 20,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut losses = Vec::new();
        for _ in 0..200 {
            losses.push(train_step(&mut p, &b, &mut st, &hp, &mut rng).unwrap().loss.total);
        }
        let after: Vec<f64> = losses[20..].to_vec();
        let dec = after.windows(2).filter(|w| w[1] < w[0]).count();
        assert!(dec as f64 >= 0.9 * (after.len() - 1) as f64, "{dec} of {}", after.len() - 1);
        assert!(losses[199] < 0.05 * losses[0], "{} -> {}", losses[0], losses[199]);
        // memorized targets are reproduced by greedy decoding
        for e in &b.examples {
            let enc = encode(&p, &b.sources[e.source]);
            let out = greedy_decode(&p, &enc, &e.prompt, &DecodeConstraint::Unrestricted, 10);
            assert_eq!(out, e.target[..e.target.len() - 1]);
        }
    }

    #[test]
    fn checkpoint_round_trip_and_hash_check() {
        let s = compile_schema(&SchemaDef::sixgtech()).unwrap();
        let v = build_vocab(["alpha beta gamma"], &s, 1).unwrap();
        let mut c = cfg(v.len());
        c.seed = 9;
        let p = ModelParams::<f64>::init(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &p, &CheckpointMeta::new(&c, &v, s.version(), "telesee")).unwrap();
        let (q, meta) = load_checkpoint::<f64>(&path, Some(&v.hash())).unwrap();
        assert_eq!(q.tensors(), p.tensors());
        assert_eq!(meta.config, c);
        assert_eq!(meta.vocabulary().unwrap(), v);
        assert!(matches!(load_checkpoint::<f64>(&path, Some("nope")), Err(ModelError::VocabMismatch { .. })));
        let q32 = load_checkpoint::<f32>(&path, None).unwrap().0;
        assert_eq!(q32.param_count(), p.param_count());
    }

    #[test]
    fn dropout_changes_training_loss_only_when_enabled() {
        let mut c = cfg(30);
        c.dropout_rate = 0.3;
        let mut p = ModelParams::<f64>::init(&c).unwrap();
        let b = random_batch(5, 30, 3);
        let clean = batch_loss_value(&p, &b).unwrap().total;
        let mut st = AdamState::new(&p);
        let hp = AdamConfig {
            lr: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noisy = train_step(&mut p, &b, &mut st, &hp, &mut rng).unwrap().loss.total;
        assert_ne!(clean, noisy);
    }
}
