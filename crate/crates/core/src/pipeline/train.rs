use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{baseline, PipelineError, Stage, TrainingExample};
use crate::corpus::DocumentRecord;
use crate::model::{train_step, AdamConfig, AdamState, Batch, ModelParams, StepOutcome};
use crate::scalar::Scalar;
use crate::textproc::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Examples per optimizer step.
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            optimizer: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Summed loss per stage, keyed by stage index.
    pub per_stage: BTreeMap<usize, f64>,
    pub total: f64,
    pub target_tokens: usize,
    pub steps: usize,
    pub skipped_steps: usize,
}

impl EpochLoss {
    pub fn stage(&self, s: Stage) -> f64 {
        self.per_stage.get(&s.index()).copied().unwrap_or(0.0)
    }

    /// Total loss per target token.
    pub fn mean(&self) -> f64 {
        self.total / self.target_tokens.max(1) as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLoss>,
}

/// Groups examples into a model batch labelled by stage.
pub fn to_batch(examples: &[&TrainingExample]) -> Batch {
    let mut b = Batch::new();
    for e in examples {
        b.push(e.stage.index(), &e.src_ids, e.prompt_ids.clone(), e.target_ids.clone());
    }
    b
}

/// Mini-batch training over shuffled examples of all stages. `on_epoch`
/// sees each epoch's losses as they complete and may stop training early by
/// returning false.
pub fn train<T: Scalar>(
    params: &mut ModelParams<T>,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
    state: &mut AdamState<T>,
    mut on_epoch: impl FnMut(&EpochLoss, &ModelParams<T>) -> bool,
) -> Result<TrainReport, PipelineError> {
    if examples.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut ep = EpochLoss {
            epoch,
            per_stage: BTreeMap::new(),
            total: 0.0,
            target_tokens: 0,
            steps: 0,
            skipped_steps: 0,
        };
        for (step, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let refs: Vec<&TrainingExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let batch = to_batch(&refs);
            let r = train_step(params, &batch, state, &cfg.optimizer, &mut rng)?;
            let total = r.loss.total.to_f64_lossy();
            if !total.is_finite() {
                let per: Vec<String> = r.loss.per_group.iter().map(|(g, l)| format!("stage {g}: {l}")).collect();
                return Err(PipelineError::NonFiniteLoss {
                    epoch,
                    step,
                    detail: per.join(", "),
                });
            }
            for (g, l) in &r.loss.per_group {
                *ep.per_stage.entry(*g).or_insert(0.0) += l.to_f64_lossy();
            }
            ep.total += total;
            ep.target_tokens += r.loss.target_tokens;
            ep.steps += 1;
            if r.outcome == StepOutcome::Skipped {
                ep.skipped_steps += 1;
            }
        }
        let keep_going = on_epoch(&ep, params);
        report.epochs.push(ep);
        if !keep_going {
            break;
        }
    }
    Ok(report)
}

/// Baseline examples: prompt BOS, target the JSON token sequence plus EOS.
pub fn build_json_examples(record: &DocumentRecord, vocab: &Vocabulary) -> Vec<TrainingExample> {
    let mut target = vocab.encode_tokens(&baseline::json_target_tokens(record.gold()));
    target.push(vocab.eos_id());
    vec![TrainingExample {
        stage: Stage::Json,
        src_ids: vocab.encode_text(&record.text),
        prompt_ids: vec![vocab.bos_id()],
        target_ids: target,
    }]
}
