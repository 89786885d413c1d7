use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use telesee::corpus::{self, load_dataset, save_dataset, synth_generate, CorpusStats, DocumentRecord, LoadOptions};
use telesee::schema::{compile_schema, CompiledSchema, SchemaDef};

use crate::config::{existing, required, resolve_seed};
use crate::error::{CliError, CliResult};
use crate::manifest::write_manifest;

/// Loads `--schema`, or the built-in 6GTech schema when no path is given.
pub fn load_schema(path: Option<&Path>) -> CliResult<CompiledSchema> {
    match path {
        Some(p) => {
            if !p.exists() {
                return Err(CliError::Usage(format!("--schema {}: no such file", p.display())));
            }
            Ok(CompiledSchema::load(p)?)
        }
        None => Ok(compile_schema(&SchemaDef::sixgtech())?),
    }
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

fn save(path: &Path, records: &[DocumentRecord]) -> CliResult<()> {
    write_text(path, "")?;
    Ok(save_dataset(path, records)?)
}

fn inputs<'a>(paths: &[&'a Option<PathBuf>]) -> Vec<&'a Path> {
    paths.iter().filter_map(|p| p.as_deref()).collect()
}

pub fn schema_compile(input: Option<PathBuf>, out: Option<PathBuf>) -> CliResult<()> {
    let input = existing("--in", input)?;
    let out = required("--out", out)?;
    let def = SchemaDef::from_json_file(&input)?;
    let compiled = compile_schema(&def)?;
    write_text(&out, &(compiled.to_json() + "\n"))?;
    write_manifest("schema compile", &[&input], &[&out], serde_json::json!({"version": compiled.version()}))?;
    eprintln!(
        "compiled schema {}: {} entity types, {} attribute keys",
        compiled.version(),
        compiled.entity_types().len(),
        compiled.attribute_keys().len()
    );
    Ok(())
}

#[derive(Args)]
pub struct ValidateArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Schema definition or compiled registry; defaults to the built-in 6GTech schema.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Accept records without an `entities` array (prediction inputs).
    #[arg(long)]
    no_gold: bool,
    /// Write the aligned records here.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn validate(a: ValidateArgs) -> CliResult<()> {
    let input = existing("--in", a.input)?;
    let schema = load_schema(a.schema.as_deref())?;
    let opts = if a.no_gold { LoadOptions::INPUT } else { LoadOptions::GOLD };
    let records = load_dataset(&input, &schema, opts)?;
    eprintln!("{}: {} valid records (schema {})", input.display(), records.len(), schema.version());
    if let Some(out) = &a.out {
        save(out, &records)?;
        let mut ins = vec![input.as_path()];
        ins.extend(inputs(&[&a.schema]));
        write_manifest("dataset validate", &ins, &[out], serde_json::json!({"schema_version": schema.version(), "no_gold": a.no_gold}))?;
    }
    Ok(())
}

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Published totals of the reference 6GTech corpus. Counting rules differ,
/// so these are shown for comparison only.
const REFERENCE_SENTENCES: usize = 2390;
const REFERENCE_WORDS: usize = 23747;

#[derive(Serialize)]
struct StatsFile {
    #[serde(flatten)]
    stats: CorpusStats,
    reference_sentences: usize,
    reference_words: usize,
    note: &'static str,
}

pub fn stats(a: StatsArgs) -> CliResult<()> {
    let input = existing("--in", a.input)?;
    let out = required("--out", a.out)?;
    let schema = load_schema(a.schema.as_deref())?;
    let records = load_dataset(&input, &schema, LoadOptions::INPUT)?;
    let s = corpus::stats(&records);
    eprintln!("documents {}  entities {}", s.documents, s.entities);
    eprintln!("sentences {}  (published corpus: {REFERENCE_SENTENCES})", s.sentences);
    eprintln!("words     {}  (published corpus: {REFERENCE_WORDS})", s.words);
    eprintln!("note: sentences split on . ? ! before whitespace; words are normalized tokens per sentence; the published counting rules are unknown");
    let file = StatsFile {
        stats: s,
        reference_sentences: REFERENCE_SENTENCES,
        reference_words: REFERENCE_WORDS,
        note: "reference totals use unknown counting rules; not expected to match exactly",
    };
    write_json(&out, &file)?;
    let mut ins = vec![input.as_path()];
    ins.extend(inputs(&[&a.schema]));
    write_manifest("dataset stats", &ins, &[&out], serde_json::json!({"schema_version": schema.version()}))?;
    Ok(())
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn synth(a: SynthArgs) -> CliResult<()> {
    let n = required("--n", a.n)?;
    if n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let out = required("--out", a.out)?;
    let seed = resolve_seed(a.seed, None)?;
    let schema = load_schema(a.schema.as_deref())?;
    let records = synth_generate(&schema, n, seed);
    save(&out, &records)?;
    write_manifest("dataset synth", &inputs(&[&a.schema]), &[&out], serde_json::json!({"n": n, "seed": seed, "schema_version": schema.version()}))?;
    eprintln!("wrote {n} synthetic documents to {}", out.display());
    Ok(())
}

#[derive(Args)]
pub struct SplitArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Comma-separated train,dev,test fractions summing to 1.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    ratios: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    out_prefix: Option<PathBuf>,
}

pub fn parse_ratios(s: &str) -> CliResult<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--ratios {s:?}: expected three numbers")))?;
    <[f64; 3]>::try_from(parts).map_err(|_| CliError::Usage(format!("--ratios {s:?}: expected three numbers")))
}

pub fn split(a: SplitArgs) -> CliResult<()> {
    let input = existing("--in", a.input)?;
    let prefix = required("--out-prefix", a.out_prefix)?;
    let seed = resolve_seed(a.seed, None)?;
    let ratios = parse_ratios(&a.ratios)?;
    let schema = load_schema(a.schema.as_deref())?;
    let records = load_dataset(&input, &schema, LoadOptions::INPUT)?;
    let (train, dev, test) = corpus::split(&records, ratios, seed).map_err(|e| CliError::Usage(format!("--ratios: {e}")))?;
    let mut outs = Vec::new();
    for (part, recs) in [("train", &train), ("dev", &dev), ("test", &test)] {
        let mut name = prefix.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(format!(".{part}.jsonl"));
        let p = prefix.with_file_name(name);
        save(&p, recs)?;
        outs.push(p);
    }
    let mut ins = vec![input.as_path()];
    ins.extend(inputs(&[&a.schema]));
    let out_refs: Vec<&Path> = outs.iter().map(|p| p.as_path()).collect();
    write_manifest("dataset split", &ins, &out_refs, serde_json::json!({"ratios": ratios, "seed": seed}))?;
    eprintln!("split {} records into {}/{}/{}", records.len(), train.len(), dev.len(), test.len());
    Ok(())
}
