//! `telesee`: schema compilation, dataset tooling, training, extraction,
//! evaluation, benchmarking and report tables.

mod config;
mod data;
mod error;
mod manifest;
mod model;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliResult;

#[derive(Parser)]
#[command(name = "telesee", version, about = "Schema-guided structured entity extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Schema registry tools.
    #[command(subcommand)]
    Schema(SchemaCmd),
    /// JSONL dataset tools.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Train an extraction model (three-stage or JSON baseline).
    Train(model::TrainArgs),
    /// Extract entity sets from documents.
    Extract(model::ExtractArgs),
    /// Score predictions against references.
    Eval(report::EvalArgs),
    /// Measure extraction throughput.
    Bench(model::BenchArgs),
    /// Build plot-ready tables from eval and bench outputs.
    Report(report::ReportArgs),
}

#[derive(Subcommand)]
enum SchemaCmd {
    /// Compile a schema definition into its token registry.
    Compile(CompileArgs),
}

#[derive(Args)]
struct CompileArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum DatasetCmd {
    Validate(data::ValidateArgs),
    Stats(data::StatsArgs),
    Synth(data::SynthArgs),
    Split(data::SplitArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Schema(SchemaCmd::Compile(a)) => data::schema_compile(a.input, a.out),
        Command::Dataset(DatasetCmd::Validate(a)) => data::validate(a),
        Command::Dataset(DatasetCmd::Stats(a)) => data::stats(a),
        Command::Dataset(DatasetCmd::Synth(a)) => data::synth(a),
        Command::Dataset(DatasetCmd::Split(a)) => data::split(a),
        Command::Train(a) => model::train(a),
        Command::Extract(a) => model::extract(a),
        Command::Eval(a) => report::eval(a),
        Command::Bench(a) => model::bench(a),
        Command::Report(a) => report::report(a),
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors by itself
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({"error": e.kind(), "message": e.to_string()});
            eprintln!("error: {e}");
            eprintln!("{report}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
