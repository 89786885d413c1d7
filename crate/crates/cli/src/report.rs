use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use telesee::corpus::{load_dataset, DocumentRecord, LoadOptions};
use telesee::metric::{evaluate_corpus, metric_correlation, CorpusReport, CorrelationSummary, MatchMode, Pooling, SystemScores};

use crate::config::{existing, pick, required, RunConfig};
use crate::data::{load_schema, write_json, write_text};
use crate::error::{CliError, CliResult};
use crate::manifest::write_manifest;
use crate::model::BenchFile;

/// Corpus reports under all three pairing modes.
pub fn score_all(preds: &[DocumentRecord], refs: &[DocumentRecord], name_weight: f64, pooling: Pooling) -> CliResult<Vec<CorpusReport>> {
    MatchMode::all(name_weight)?
        .into_iter()
        .map(|m| evaluate_corpus(preds, refs, m, pooling).map_err(CliError::from))
        .collect()
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// exact, approx, multiprop or all
    #[arg(long)]
    mode: Option<String>,
    /// Weight of the name in MultiProp pairing, strictly between 0 and 1.
    #[arg(long)]
    name_weight: Option<f64>,
    /// per-doc (mean of document scores) or pooled
    #[arg(long)]
    pooling: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// key,score rows for the primary mode.
    #[arg(long)]
    per_attribute: Option<PathBuf>,
    /// Name for this system in report tables; defaults to the prediction file stem.
    #[arg(long)]
    system: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalFile {
    pub system: String,
    pub schema_version: Option<String>,
    pub pooling: Pooling,
    pub name_weight: f64,
    pub documents: usize,
    /// Corpus δ per mode label.
    pub scores: BTreeMap<String, f64>,
    pub reports: Vec<CorpusReport>,
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).and_then(|_| rows.iter().try_for_each(|r| w.write_record(r))).map_err(|e| CliError::Runtime(e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    write_text(path, &String::from_utf8(bytes).expect("csv is utf-8"))
}

fn num(x: f64) -> String {
    format!("{x:.6}")
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let file = RunConfig::load(a.config.as_deref())?;
    let pred = existing("--pred", a.pred)?;
    let reference = existing("--ref", a.reference)?;
    let out = required("--out", pick(&a.out, &file.out))?;
    let schema_path = pick(&a.schema, &file.schema);
    let schema = load_schema(schema_path.as_deref())?;
    let name_weight = pick(&a.name_weight, &file.eval.name_weight).unwrap_or(MatchMode::DEFAULT_NAME_WEIGHT);
    let pooling: Pooling = pick(&a.pooling, &file.eval.pooling)
        .map(|p| p.parse().map_err(|e: String| CliError::Usage(format!("--pooling: {e}"))))
        .transpose()?
        .unwrap_or_default();
    let mode = pick(&a.mode, &file.eval.mode).unwrap_or_else(|| "all".into());
    let modes: Vec<MatchMode> = if mode == "all" {
        MatchMode::all(name_weight).map_err(|e| CliError::Usage(format!("--name-weight: {e}")))?.to_vec()
    } else {
        let m: MatchMode = mode.parse().map_err(|e| CliError::Usage(format!("--mode: {e}")))?;
        vec![match m {
            MatchMode::MultiProp { .. } => MatchMode::multiprop(name_weight).map_err(|e| CliError::Usage(format!("--name-weight: {e}")))?,
            other => other,
        }]
    };
    let preds = load_dataset(&pred, &schema, LoadOptions::INPUT)?;
    let refs = load_dataset(&reference, &schema, LoadOptions::GOLD)?;
    let reports: Vec<CorpusReport> = modes.iter().map(|&m| evaluate_corpus(&preds, &refs, m, pooling)).collect::<Result<_, _>>()?;
    let scores: BTreeMap<String, f64> = reports.iter().map(|r| (r.mode.label().to_string(), r.delta)).collect();
    for (m, d) in &scores {
        eprintln!("{m:>9}  delta {d:.4}");
    }
    let system = a
        .system
        .unwrap_or_else(|| pred.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "system".into()));
    let ef = EvalFile {
        system,
        schema_version: Some(schema.version().to_string()),
        pooling,
        name_weight,
        documents: refs.len(),
        scores,
        reports,
    };
    write_json(&out, &ef)?;
    let mut outs = vec![out.as_path()];
    if let Some(pa) = &a.per_attribute {
        let primary = ef.reports.iter().find(|r| matches!(r.mode, MatchMode::MultiProp { .. })).unwrap_or(&ef.reports[0]);
        let rows: Vec<Vec<String>> = primary.per_attribute.iter().map(|(k, v)| vec![k.clone(), num(*v)]).collect();
        write_csv(pa, &["key", "score"], &rows)?;
        outs.push(pa);
    }
    let mut ins = vec![pred.as_path(), reference.as_path()];
    ins.extend(schema_path.as_deref());
    ins.extend(a.config.as_deref());
    write_manifest(
        "eval",
        &ins,
        &outs,
        serde_json::json!({"modes": modes, "name_weight": name_weight, "pooling": pooling}),
    )?;
    Ok(())
}

#[derive(Args)]
pub struct ReportArgs {
    /// Files written by `eval`.
    #[arg(long, num_args = 1..)]
    eval: Vec<PathBuf>,
    /// Files written by `bench`.
    #[arg(long, num_args = 1..)]
    bench: Vec<PathBuf>,
    /// Main table: efficiency vs effectiveness when bench files are given,
    /// otherwise scores per mode. Further tables are written beside it.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_json<T: for<'de> Deserialize<'de>>(flag: &str, path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{flag} {}: {e}", path.display())))
}

fn scores_of(system: &str, reports: &[CorpusReport]) -> CliResult<SystemScores> {
    let get = |label: &str| {
        reports
            .iter()
            .find(|r| r.mode.label() == label)
            .map(|r| r.delta)
            .ok_or_else(|| CliError::Validation(format!("{system}: no {label} score; evaluate with --mode all")))
    };
    Ok(SystemScores {
        system: system.to_string(),
        exact: get("exact")?,
        approx: get("approx")?,
        multiprop: get("multiprop")?,
    })
}

fn radar_of(reports: &[CorpusReport]) -> Option<&BTreeMap<String, f64>> {
    reports
        .iter()
        .find(|r| matches!(r.mode, MatchMode::MultiProp { .. }))
        .or(reports.first())
        .map(|r| &r.per_attribute)
}

/// `<dir>/<stem>_<name>`
fn beside(out: &Path, name: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_{name}"))
}

#[derive(Serialize)]
struct Summary {
    systems: Vec<SystemScores>,
    correlation: Option<CorrelationSummary>,
    efficiency: Vec<EfficiencyRow>,
}

#[derive(Serialize)]
struct EfficiencyRow {
    system: String,
    samples_per_sec: f64,
    mean_output_tokens: f64,
    scores: Option<SystemScores>,
}

pub fn report(a: ReportArgs) -> CliResult<()> {
    if a.eval.is_empty() && a.bench.is_empty() {
        return Err(CliError::Usage("no inputs: pass --eval and/or --bench files".into()));
    }
    let out = required("--out", a.out)?;
    let evals: Vec<EvalFile> = a
        .eval
        .iter()
        .map(|p| existing("--eval", Some(p.clone())).and_then(|p| read_json("--eval", &p)))
        .collect::<CliResult<_>>()?;
    let benches: Vec<BenchFile> = a
        .bench
        .iter()
        .map(|p| existing("--bench", Some(p.clone())).and_then(|p| read_json("--bench", &p)))
        .collect::<CliResult<_>>()?;

    let versions: BTreeSet<&str> = evals
        .iter()
        .filter_map(|e| e.schema_version.as_deref())
        .chain(benches.iter().map(|b| b.schema_version.as_str()))
        .collect();
    if versions.len() > 1 {
        return Err(CliError::Validation(format!("mixed schema versions: {versions:?}")));
    }

    let mut systems: Vec<SystemScores> = Vec::new();
    let mut radar: Vec<(String, &BTreeMap<String, f64>)> = Vec::new();
    for e in &evals {
        systems.push(scores_of(&e.system, &e.reports)?);
        if let Some(r) = radar_of(&e.reports) {
            radar.push((e.system.clone(), r));
        }
    }
    let mut efficiency = Vec::new();
    for b in &benches {
        let scores = match (&b.scores, systems.iter().find(|s| s.system == b.label)) {
            (_, Some(s)) => Some(s.clone()),
            (Some(r), None) => Some(scores_of(&b.label, r)?),
            (None, None) => None,
        };
        if evals.is_empty() {
            if let Some(s) = &scores {
                systems.push(s.clone());
            }
            if let Some(r) = b.scores.as_deref().and_then(radar_of) {
                radar.push((b.label.clone(), r));
            }
        }
        efficiency.push(EfficiencyRow {
            system: b.label.clone(),
            samples_per_sec: b.bench.samples_per_sec,
            mean_output_tokens: b.bench.mean_output_tokens,
            scores,
        });
    }

    let mut outputs = Vec::new();
    let score_rows: Vec<Vec<String>> = systems
        .iter()
        .map(|s| vec![s.system.clone(), num(s.exact), num(s.approx), num(s.multiprop)])
        .collect();
    let score_header = ["system", "exact", "approx", "multiprop"];
    if benches.is_empty() {
        write_csv(&out, &score_header, &score_rows)?;
        outputs.push(out.clone());
    } else {
        let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
        let rows: Vec<Vec<String>> = efficiency
            .iter()
            .zip(&benches)
            .map(|(e, b)| {
                vec![
                    e.system.clone(),
                    format!("{:?}", b.bench.batching).to_lowercase(),
                    num(e.samples_per_sec),
                    num(b.bench.spread.0),
                    num(b.bench.spread.1),
                    num(b.bench.latency.p50_ms),
                    num(e.mean_output_tokens),
                    b.bench.param_count.to_string(),
                    opt(e.scores.as_ref().map(|s| s.exact)),
                    opt(e.scores.as_ref().map(|s| s.approx)),
                    opt(e.scores.as_ref().map(|s| s.multiprop)),
                ]
            })
            .collect();
        write_csv(
            &out,
            &[
                "system",
                "batching",
                "samples_per_sec",
                "spread_low",
                "spread_high",
                "latency_p50_ms",
                "mean_output_tokens",
                "param_count",
                "exact",
                "approx",
                "multiprop",
            ],
            &rows,
        )?;
        outputs.push(out.clone());
        if !systems.is_empty() {
            let p = beside(&out, "scores.csv");
            write_csv(&p, &score_header, &score_rows)?;
            outputs.push(p);
        }
    }

    let correlation = if systems.len() >= 2 {
        let c = metric_correlation(&systems)?;
        let row = |pair: &str, x: &telesee::metric::Correlation| vec![pair.to_string(), systems.len().to_string(), num(x.pearson), num(x.spearman), x.degenerate.to_string()];
        let p = beside(&out, "correlation.csv");
        write_csv(
            &p,
            &["pair", "systems", "pearson", "spearman", "degenerate"],
            &[row("multiprop-exact", &c.multiprop_vs_exact), row("multiprop-approx", &c.multiprop_vs_approx)],
        )?;
        outputs.push(p);
        Some(c)
    } else {
        None
    };

    if !radar.is_empty() {
        let rows: Vec<Vec<String>> = radar
            .iter()
            .flat_map(|(sys, m)| m.iter().map(move |(k, v)| vec![sys.clone(), k.clone(), num(*v)]))
            .collect();
        let p = beside(&out, "radar.csv");
        write_csv(&p, &["system", "attribute", "score"], &rows)?;
        outputs.push(p);
    }

    let summary_path = beside(&out, "summary.json");
    write_json(
        &summary_path,
        &Summary {
            systems,
            correlation,
            efficiency,
        },
    )?;
    outputs.push(summary_path);

    let ins: Vec<&Path> = a.eval.iter().chain(&a.bench).map(|p| p.as_path()).collect();
    let outs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
    write_manifest("report", &ins, &outs, serde_json::json!({"eval": a.eval, "bench": a.bench}))?;
    for p in &outputs {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}
