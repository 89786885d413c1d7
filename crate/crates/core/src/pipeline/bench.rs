use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{baseline_json_extract, Batching, DecodeLimits, Extractor, PipelineError};
use crate::corpus::DocumentRecord;
use crate::model::ModelParams;
use crate::scalar::Scalar;
use crate::schema::CompiledSchema;
use crate::textproc::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum System {
    Telesee,
    LmJson,
}

impl System {
    pub fn label(self) -> &'static str {
        match self {
            System::Telesee => "telesee",
            System::LmJson => "lm-json",
        }
    }
}

impl FromStr for System {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "telesee" => Ok(System::Telesee),
            "lm-json" => Ok(System::LmJson),
            other => Err(format!("unknown system {other:?} (expected telesee or lm-json)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareInfo {
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
    pub precision: String,
}

impl HardwareInfo {
    pub fn detect<T: Scalar>() -> Self {
        HardwareInfo {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            precision: format!("f{}", std::mem::size_of::<T>() * 8),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub system: System,
    pub batching: Batching,
    pub documents: usize,
    pub repetitions: usize,
    /// Median over repetitions.
    pub samples_per_sec: f64,
    pub per_repetition: Vec<f64>,
    pub spread: (f64, f64),
    /// Per-document latency pooled over repetitions.
    pub latency: LatencySummary,
    /// Mean prompts per decode call in stages 2 and 3 (1 for the baseline).
    pub mean_stage2_batch: f64,
    pub mean_stage3_batch: f64,
    pub mean_output_tokens: f64,
    pub param_count: usize,
    pub hardware: HardwareInfo,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Times extraction over `docs`, `reps` times, after one warm-up document.
#[allow(clippy::too_many_arguments)]
pub fn bench_throughput<T: Scalar>(
    system: System,
    params: &ModelParams<T>,
    vocab: &Vocabulary,
    schema: &CompiledSchema,
    docs: &[DocumentRecord],
    reps: usize,
    batching: Batching,
    limits: DecodeLimits,
) -> Result<BenchReport, PipelineError> {
    if docs.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    let reps = reps.max(1);
    let ex = Extractor::new(params, vocab, schema).with_limits(limits);
    let run = |r: &DocumentRecord| -> Result<(usize, usize, usize, usize, usize), PipelineError> {
        match system {
            System::Telesee => {
                let (_, t) = ex.extract(&r.text, batching)?;
                Ok((t.output_tokens(), t.stage2.prompts, usize::from(t.stage2.prompts > 0), t.stage3.prompts, usize::from(t.stage3.prompts > 0)))
            }
            System::LmJson => {
                let out = baseline_json_extract(params, vocab, schema, &r.text, limits.json);
                Ok((out.output_tokens, 0, 0, 0, 0))
            }
        }
    };
    run(&docs[0])?;

    let mut per_rep = Vec::with_capacity(reps);
    let mut latencies = Vec::with_capacity(reps * docs.len());
    let (mut tokens, mut s2, mut c2, mut s3, mut c3) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for rep in 0..reps {
        let start = Instant::now();
        for r in docs {
            let t = Instant::now();
            let (tok, p2, n2, p3, n3) = run(r)?;
            latencies.push(t.elapsed().as_secs_f64() * 1e3);
            if rep == 0 {
                tokens += tok;
                s2 += p2;
                c2 += n2;
                s3 += p3;
                c3 += n3;
            }
        }
        per_rep.push(docs.len() as f64 / start.elapsed().as_secs_f64());
    }
    latencies.sort_by(f64::total_cmp);
    let batch_mean = |s: usize, c: usize| match (system, batching) {
        (System::Telesee, Batching::Parallel) if c > 0 => s as f64 / c as f64,
        _ => 1.0,
    };
    let lo = per_rep.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = per_rep.iter().copied().fold(0.0, f64::max);
    Ok(BenchReport {
        system,
        batching,
        documents: docs.len(),
        repetitions: reps,
        samples_per_sec: median(&per_rep),
        spread: (lo, hi),
        per_repetition: per_rep,
        latency: LatencySummary {
            mean_ms: latencies.iter().sum::<f64>() / latencies.len() as f64,
            p50_ms: quantile(&latencies, 0.5),
            p90_ms: quantile(&latencies, 0.9),
            max_ms: *latencies.last().expect("non-empty"),
        },
        mean_stage2_batch: batch_mean(s2, c2),
        mean_stage3_batch: batch_mean(s3, c3),
        mean_output_tokens: tokens as f64 / docs.len() as f64,
        param_count: params.param_count(),
        hardware: HardwareInfo::detect::<T>(),
    })
}
