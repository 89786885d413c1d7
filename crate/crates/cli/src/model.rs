use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use telesee::corpus::{load_dataset, DocumentRecord, EntitySet, LoadOptions};
use telesee::metric::{CorpusReport, Pooling};
use telesee::model::{load_checkpoint, save_checkpoint, AdamConfig, AdamState, CheckpointMeta, ModelConfig, ModelParams};
use telesee::pipeline::{
    baseline_json_extract, bench_throughput, build_json_examples, build_training_examples, extract_corpus, model_vocab, train as run_training, Batching, BenchReport,
    DecodeLimits, Extractor, Stage, System, TrainConfig, TrainingExample,
};
use telesee::scalar::Scalar;
use telesee::schema::CompiledSchema;
use telesee::textproc::Vocabulary;

use crate::config::{existing, pick, required, resolve_seed, RunConfig};
use crate::data::{load_schema, write_json, write_text};
use crate::error::{CliError, CliResult};
use crate::manifest::write_manifest;
use crate::report::score_all;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Precision {
    F32,
    F64,
}

fn precision(flag: &Option<String>, file: &Option<String>) -> CliResult<Precision> {
    match pick(flag, file).as_deref() {
        None | Some("f32") => Ok(Precision::F32),
        Some("f64") => Ok(Precision::F64),
        Some(other) => Err(CliError::Usage(format!("--precision {other:?}: expected f32 or f64"))),
    }
}

fn system(s: &str) -> CliResult<System> {
    s.parse().map_err(|e: String| CliError::Usage(format!("--system: {e}")))
}

#[derive(Args)]
pub struct TrainArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// telesee or lm-json
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    ffn_dim: Option<usize>,
    #[arg(long)]
    max_src_len: Option<usize>,
    #[arg(long)]
    max_tgt_len: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Minimum corpus frequency for a word to enter the vocabulary.
    #[arg(long)]
    min_count: Option<usize>,
    /// f32 (default) or f64
    #[arg(long)]
    precision: Option<String>,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    system: &'a str,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    precision: &'a str,
    documents: usize,
    examples: usize,
    vocab_size: usize,
    param_count: usize,
    epochs: &'a [telesee::pipeline::EpochLoss],
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let file = RunConfig::load(a.config.as_deref())?;
    let data = existing("--data", pick(&a.data, &file.data))?;
    let schema_path = pick(&a.schema, &file.schema);
    let out = required("--out", pick(&a.out, &file.checkpoint))?;
    let sys = system(&pick(&a.system, &file.system).unwrap_or_else(|| "telesee".into()))?;
    let seed = resolve_seed(a.seed, file.seed)?;
    let prec = precision(&a.precision, &file.precision)?;
    let schema = load_schema(schema_path.as_deref())?;
    let records = load_dataset(&data, &schema, LoadOptions::GOLD)?;
    if records.is_empty() {
        return Err(CliError::Validation(format!("--data {}: no records", data.display())));
    }
    let min_count = pick(&a.min_count, &file.train.min_count).unwrap_or(1);
    let vocab = model_vocab(&records, &schema, min_count)?;
    let examples: Vec<TrainingExample> = match sys {
        System::Telesee => {
            let mut all = Vec::new();
            for r in &records {
                all.extend(build_training_examples(r, &schema, &vocab)?);
            }
            all
        }
        System::LmJson => records.iter().flat_map(|r| build_json_examples(r, &vocab)).collect(),
    };

    let m = &file.model;
    let mut cfg = ModelConfig::small(vocab.len());
    cfg.d_model = pick(&a.d_model, &m.d_model).unwrap_or(cfg.d_model);
    cfg.n_heads = pick(&a.heads, &m.n_heads).unwrap_or(cfg.n_heads);
    cfg.n_layers = pick(&a.layers, &m.n_layers).unwrap_or(cfg.n_layers);
    cfg.ffn_dim = pick(&a.ffn_dim, &m.ffn_dim).unwrap_or(cfg.ffn_dim);
    cfg.dropout_rate = pick(&a.dropout, &m.dropout).unwrap_or(0.0);
    // long enough for every training document and target unless capped
    let longest_src = examples.iter().map(|e| e.src_ids.len()).max().unwrap_or(0);
    let longest_tgt = examples.iter().map(|e| e.prompt_ids.len() + e.target_ids.len()).max().unwrap_or(0);
    cfg.max_src_len = pick(&a.max_src_len, &m.max_src_len).unwrap_or(cfg.max_src_len.max(longest_src));
    cfg.max_tgt_len = pick(&a.max_tgt_len, &m.max_tgt_len).unwrap_or(cfg.max_tgt_len.max(longest_tgt));
    cfg.seed = seed;
    cfg.validate()?;

    let t = &file.train;
    let tcfg = TrainConfig {
        epochs: pick(&a.epochs, &t.epochs).unwrap_or(10),
        batch_size: pick(&a.batch_size, &t.batch_size).unwrap_or(16),
        optimizer: AdamConfig {
            lr: pick(&a.lr, &t.lr).unwrap_or(1e-4),
            weight_decay: pick(&a.weight_decay, &t.weight_decay).unwrap_or(0.01),
            warmup_steps: pick(&a.warmup, &t.warmup).unwrap_or(100),
            ..AdamConfig::default()
        },
        seed,
    };
    eprintln!(
        "training {} on {} documents ({} examples, vocab {}, {:?})",
        sys.label(),
        records.len(),
        examples.len(),
        vocab.len(),
        prec
    );
    let (epochs, param_count) = match prec {
        Precision::F32 => fit::<f32>(&cfg, &tcfg, &examples, &vocab, &schema, sys, &out)?,
        Precision::F64 => fit::<f64>(&cfg, &tcfg, &examples, &vocab, &schema, sys, &out)?,
    };
    let prec_label = if prec == Precision::F32 { "f32" } else { "f64" };
    let summary = TrainSummary {
        system: sys.label(),
        model: &cfg,
        train: &tcfg,
        precision: prec_label,
        documents: records.len(),
        examples: examples.len(),
        vocab_size: vocab.len(),
        param_count,
        epochs: &epochs,
    };
    let log = sibling(&out, "train.json");
    write_json(&log, &summary)?;
    let mut ins = vec![data.as_path()];
    ins.extend(schema_path.as_deref());
    ins.extend(a.config.as_deref());
    let effective = serde_json::json!({
        "seed": seed, "data": data, "schema": schema_path, "checkpoint": out, "system": sys.label(),
        "precision": prec_label, "model": cfg, "train": tcfg, "min_count": min_count,
    });
    write_manifest("train", &ins, &[&out, &log], effective)?;
    Ok(())
}

/// `<path>.<suffix>`
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

fn fit<T: Scalar>(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    examples: &[TrainingExample],
    vocab: &Vocabulary,
    schema: &CompiledSchema,
    sys: System,
    out: &Path,
) -> CliResult<(Vec<telesee::pipeline::EpochLoss>, usize)> {
    let mut params = ModelParams::<T>::init(cfg)?;
    let mut state = AdamState::new(&params);
    let report = run_training(&mut params, examples, tcfg, &mut state, |ep, _| {
        let stages: Vec<String> = ep
            .per_stage
            .iter()
            .map(|(s, l)| {
                let name = match Stage::from_index(*s) {
                    Some(Stage::Names) => "names",
                    Some(Stage::TypeAndKeys) => "type+keys",
                    Some(Stage::Values) => "values",
                    _ => "json",
                };
                format!("{name} {l:.3}")
            })
            .collect();
        eprintln!(
            "epoch {}/{}  loss {:.4}  per-token {:.4}  [{}]{}",
            ep.epoch,
            tcfg.epochs,
            ep.total,
            ep.mean(),
            stages.join(", "),
            if ep.skipped_steps > 0 { format!("  skipped {}", ep.skipped_steps) } else { String::new() }
        );
        true
    })?;
    let mut meta = CheckpointMeta::new(cfg, vocab, schema.version(), sys.label());
    meta.extra = serde_json::json!({ "train": tcfg });
    write_text(out, "")?;
    save_checkpoint(out, &params, &meta)?;
    Ok((report.epochs, params.param_count()))
}

struct Loaded<T> {
    params: ModelParams<T>,
    vocab: Vocabulary,
    schema: CompiledSchema,
    system: System,
}

fn load_model<T: Scalar>(model: &Path, schema_path: Option<&Path>, want: Option<System>) -> CliResult<Loaded<T>> {
    let (params, meta) = load_checkpoint::<T>(model, None)?;
    let vocab = meta.vocabulary()?;
    let schema = load_schema(schema_path)?;
    if schema.version() != meta.schema_version {
        return Err(CliError::Validation(format!(
            "schema version mismatch: checkpoint was trained on {:?}, --schema is {:?}",
            meta.schema_version,
            schema.version()
        )));
    }
    let system = system(&meta.system)?;
    if let Some(w) = want.filter(|w| *w != system) {
        return Err(CliError::Validation(format!(
            "--system {} does not match the checkpoint's system {}",
            w.label(),
            system.label()
        )));
    }
    Ok(Loaded { params, vocab, schema, system })
}

#[derive(Serialize)]
struct DocTrace {
    doc_id: String,
    output_tokens: usize,
    #[serde(flatten)]
    detail: serde_json::Value,
}

/// Runs a checkpoint over `docs`, returning one entity set and trace per document.
fn run_docs<T: Scalar>(m: &Loaded<T>, docs: &[DocumentRecord], batching: Batching, jobs: usize) -> CliResult<Vec<(EntitySet, DocTrace)>> {
    let limits = DecodeLimits::default();
    match m.system {
        System::Telesee => {
            let ex = Extractor::new(&m.params, &m.vocab, &m.schema).with_limits(limits);
            let out = extract_corpus(&ex, docs, batching, jobs)?;
            Ok(out
                .into_iter()
                .zip(docs)
                .map(|((set, trace), d)| {
                    let t = DocTrace {
                        doc_id: d.doc_id.clone(),
                        output_tokens: trace.output_tokens(),
                        detail: serde_json::to_value(&trace).expect("trace serializes"),
                    };
                    (EntitySet::versioned(set.entities, m.schema.version()), t)
                })
                .collect())
        }
        System::LmJson => {
            let one = |d: &DocumentRecord| {
                let o = baseline_json_extract(&m.params, &m.vocab, &m.schema, &d.text, limits.json);
                let t = DocTrace {
                    doc_id: d.doc_id.clone(),
                    output_tokens: o.output_tokens,
                    detail: serde_json::json!({"repaired": o.repaired, "unparseable": o.unparseable, "dropped": o.dropped, "raw": o.text}),
                };
                (o.entities, t)
            };
            let jobs = jobs.clamp(1, docs.len().max(1));
            let chunk = docs.len().div_ceil(jobs).max(1);
            Ok(std::thread::scope(|s| {
                let handles: Vec<_> = docs.chunks(chunk).map(|c| s.spawn(move || c.iter().map(one).collect::<Vec<_>>())).collect();
                handles.into_iter().flat_map(|h| h.join().expect("extraction thread panicked")).collect()
            }))
        }
    }
}

#[derive(Args)]
pub struct ExtractArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Decode one prompt at a time instead of one batch per stage.
    #[arg(long)]
    sequential: bool,
    /// Documents processed concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Also write per-document decoding traces (JSONL).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    precision: Option<String>,
}

pub fn extract(a: ExtractArgs) -> CliResult<()> {
    let file = RunConfig::load(a.config.as_deref())?;
    let model = existing("--model", pick(&a.model, &file.checkpoint))?;
    let input = existing("--in", pick(&a.input, &file.data))?;
    let out = required("--out", pick(&a.out, &file.out))?;
    let schema_path = pick(&a.schema, &file.schema);
    let batching = if a.sequential { Batching::Sequential } else { Batching::Parallel };
    let results = match precision(&a.precision, &file.precision)? {
        Precision::F32 => extract_with::<f32>(&model, schema_path.as_deref(), &input, batching, a.jobs)?,
        Precision::F64 => extract_with::<f64>(&model, schema_path.as_deref(), &input, batching, a.jobs)?,
    };
    let (preds, traces) = results;
    write_text(&out, &telesee::corpus::to_jsonl(&preds))?;
    let mut outs = vec![out.as_path()];
    if let Some(tp) = &a.trace {
        let lines: String = traces.iter().map(|t| serde_json::to_string(t).expect("trace serializes") + "\n").collect();
        write_text(tp, &lines)?;
        outs.push(tp);
    }
    let entities: usize = preds.iter().map(|p| p.gold().len()).sum();
    let tokens: usize = traces.iter().map(|t| t.output_tokens).sum();
    eprintln!(
        "extracted {entities} entities from {} documents ({:.1} output tokens per document)",
        preds.len(),
        tokens as f64 / preds.len().max(1) as f64
    );
    let mut ins = vec![model.as_path(), input.as_path()];
    ins.extend(schema_path.as_deref());
    ins.extend(a.config.as_deref());
    write_manifest(
        "extract",
        &ins,
        &outs,
        serde_json::json!({"model": model, "schema": schema_path, "in": input, "sequential": a.sequential, "jobs": a.jobs, "limits": DecodeLimits::default()}),
    )?;
    Ok(())
}

type Extracted = (Vec<DocumentRecord>, Vec<DocTrace>);

fn extract_with<T: Scalar>(model: &Path, schema: Option<&Path>, input: &Path, batching: Batching, jobs: usize) -> CliResult<Extracted> {
    let m = load_model::<T>(model, schema, None)?;
    let docs = load_dataset(input, &m.schema, LoadOptions::INPUT)?;
    let out = run_docs(&m, &docs, batching, jobs)?;
    let mut preds = Vec::with_capacity(docs.len());
    let mut traces = Vec::with_capacity(docs.len());
    for (d, (set, t)) in docs.iter().zip(out) {
        preds.push(DocumentRecord {
            doc_id: d.doc_id.clone(),
            text: d.text.clone(),
            entities: Some(set),
        });
        traces.push(t);
    }
    Ok((preds, traces))
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// telesee or lm-json; must match the checkpoint when given.
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
    /// Name used for this run in report tables; defaults to the system.
    #[arg(long)]
    label: Option<String>,
    /// Concurrency of the scoring pass (timing always runs one document at a time).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    name_weight: Option<f64>,
    #[arg(long)]
    precision: Option<String>,
}

#[derive(Debug, Serialize, serde::Deserialize)]
pub struct BenchFile {
    pub label: String,
    pub schema_version: String,
    pub bench: BenchReport,
    /// Corpus scores of the benchmarked outputs when the input carries gold entities.
    pub scores: Option<Vec<CorpusReport>>,
}

pub fn bench(a: BenchArgs) -> CliResult<()> {
    let file = RunConfig::load(a.config.as_deref())?;
    let want = pick(&a.system, &file.system).map(|s| system(&s)).transpose()?;
    let model = existing("--model", pick(&a.model, &file.checkpoint))?;
    let input = existing("--in", pick(&a.input, &file.data))?;
    let out = required("--out", pick(&a.out, &file.out))?;
    let schema_path = pick(&a.schema, &file.schema);
    let name_weight = pick(&a.name_weight, &file.eval.name_weight).unwrap_or(telesee::metric::MatchMode::DEFAULT_NAME_WEIGHT);
    let batching = if a.sequential { Batching::Sequential } else { Batching::Parallel };
    let run = BenchRun {
        model: &model,
        schema: schema_path.as_deref(),
        input: &input,
        want,
        reps: a.reps,
        batching,
        jobs: a.jobs,
        name_weight,
    };
    let (report, version, scores) = match precision(&a.precision, &file.precision)? {
        Precision::F32 => run.go::<f32>()?,
        Precision::F64 => run.go::<f64>()?,
    };
    eprintln!(
        "{} {:?}: {:.2} samples/sec (median of {}, spread {:.2}..{:.2}), {:.1} output tokens per document",
        report.system.label(),
        report.batching,
        report.samples_per_sec,
        report.repetitions,
        report.spread.0,
        report.spread.1,
        report.mean_output_tokens
    );
    let bf = BenchFile {
        label: a.label.unwrap_or_else(|| report.system.label().to_string()),
        schema_version: version,
        bench: report,
        scores,
    };
    write_json(&out, &bf)?;
    let mut ins = vec![model.as_path(), input.as_path()];
    ins.extend(schema_path.as_deref());
    ins.extend(a.config.as_deref());
    write_manifest(
        "bench",
        &ins,
        &[&out],
        serde_json::json!({"reps": a.reps, "sequential": a.sequential, "jobs": a.jobs, "name_weight": name_weight, "limits": DecodeLimits::default()}),
    )?;
    Ok(())
}

struct BenchRun<'a> {
    model: &'a Path,
    schema: Option<&'a Path>,
    input: &'a Path,
    want: Option<System>,
    reps: usize,
    batching: Batching,
    jobs: usize,
    name_weight: f64,
}

impl BenchRun<'_> {
    fn go<T: Scalar>(&self) -> CliResult<(BenchReport, String, Option<Vec<CorpusReport>>)> {
        let m = load_model::<T>(self.model, self.schema, self.want)?;
        let docs = load_dataset(self.input, &m.schema, LoadOptions::INPUT)?;
        let report = bench_throughput(m.system, &m.params, &m.vocab, &m.schema, &docs, self.reps, self.batching, DecodeLimits::default())?;
        let scores = if !docs.is_empty() && docs.iter().all(|d| d.entities.is_some()) {
            let out = run_docs(&m, &docs, self.batching, self.jobs)?;
            let preds: Vec<DocumentRecord> = docs
                .iter()
                .zip(out)
                .map(|(d, (set, _))| DocumentRecord {
                    doc_id: d.doc_id.clone(),
                    text: d.text.clone(),
                    entities: Some(set),
                })
                .collect();
            Some(score_all(&preds, &docs, self.name_weight, Pooling::PerDoc)?)
        } else {
            None
        };
        Ok((report, m.schema.version().to_string(), scores))
    }
}
