//! `execfb`: grade candidate corpora, report outcome distributions, classify
//! single programs, serve the online buffer and run toy training.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "execfb", version, about = "Unit-test execution feedback toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every candidate against its problem's tests and write one record per candidate.
    Grade(GradeArgs),
    /// Verdict and sub-error distribution of a grading file.
    Report(ReportArgs),
    /// Run and classify a single program.
    Classify(ClassifyArgs),
    /// Serve an online buffer over TCP.
    ServeBuffer(ServeArgs),
    /// Train the toy policy and write per-round metrics.
    TrainDemo(TrainArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Runtime {
    /// Subprocess sandbox running the Python shim.
    Python,
    /// Built-in interpreter for the toy Python subset.
    Toy,
}

#[derive(Args)]
struct ExecArgs {
    #[arg(long, value_enum, default_value = "python")]
    runtime: Runtime,
    #[arg(long, default_value_t = 10.0)]
    timeout_secs: f64,
    /// Interpreter used by the python runtime.
    #[arg(long, env = "EXECFB_PYTHON", default_value = "python3")]
    python: PathBuf,
    /// Shim script used by the python runtime.
    #[arg(long, env = "EXECFB_SHIM")]
    shim: Option<PathBuf>,
    #[arg(long, default_value_t = -0.3, allow_hyphen_values = true)]
    penalty_fine: f64,
}

#[derive(Args)]
struct GradeArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    candidates: PathBuf,
    /// pass@k cutoffs; repeatable.
    #[arg(long = "k", default_values_t = [1usize])]
    k: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Use first-k-in-file-order instead of the unbiased estimator.
    #[arg(long)]
    raw_best_of_k: bool,
    /// Grading records (JSONL).
    #[arg(long, default_value = "grading.jsonl")]
    out: PathBuf,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Args)]
struct ReportArgs {
    grading: PathBuf,
    /// Second grading file; prints per-verdict and per-sub-error deltas.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Human-readable table instead of JSON.
    #[arg(long)]
    table: bool,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Program source file.
    #[arg(long)]
    source: PathBuf,
    /// JSON array of `{"input", "expected_output"}`.
    #[arg(long, conflicts_with_all = ["dataset", "problem"])]
    tests: Option<PathBuf>,
    #[arg(long, requires = "problem")]
    dataset: Option<PathBuf>,
    #[arg(long, requires = "dataset")]
    problem: Option<String>,
    /// Mark the program as cut off at the token limit.
    #[arg(long)]
    truncated: bool,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    bind: String,
    #[arg(long, default_value_t = 6400)]
    capacity: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config (JSON); missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Metrics output (JSONL).
    #[arg(long, default_value = "metrics.jsonl")]
    out: PathBuf,
    /// Problem suite; defaults to the bundled toy suite.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Grade(a) => commands::grade(a),
        Command::Report(a) => commands::report(a),
        Command::Classify(a) => commands::classify(a),
        Command::ServeBuffer(a) => commands::serve_buffer(a),
        Command::TrainDemo(a) => commands::train_demo(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
