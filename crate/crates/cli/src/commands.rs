use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use execfeedback::buffer::BufferServer;
use execfeedback::dataset;
use execfeedback::report::{self, Comparison, Estimator, GradeSummary};
use execfeedback::reward::{self, RewardConfig};
use execfeedback::sandbox::{SandboxConfig, SandboxError, SubprocessExecutor};
use execfeedback::toy::experiment::{self, ExperimentConfig};
use execfeedback::toy::runtime::ToyRuntime;
use execfeedback::toy::suite;
use execfeedback::{CandidateProgram, ErrorDistribution, Limits, OnlineBuffer, Problem, TestCase, TestRunner};
use serde_json::json;

use crate::{ClassifyArgs, ExecArgs, GradeArgs, ReportArgs, Runtime, ServeArgs, TrainArgs};

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_SANDBOX: u8 = 3;

pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

type CmdResult = Result<(), CliError>;

fn input(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: EXIT_INPUT,
        error: e.into(),
    }
}

fn failure(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: EXIT_FAILURE,
        error: e.into(),
    }
}

fn sandbox(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: EXIT_SANDBOX,
        error: e.into(),
    }
}

fn runner(args: &ExecArgs) -> Result<Box<dyn TestRunner>, CliError> {
    match args.runtime {
        Runtime::Toy => Ok(Box::new(ToyRuntime::default())),
        Runtime::Python => {
            let shim = args.shim.clone().ok_or_else(|| {
                sandbox(anyhow!(
                    "python runtime needs a shim: pass --shim or set {}",
                    execfeedback::sandbox::ENV_SHIM
                ))
            })?;
            let exec = SubprocessExecutor::new(SandboxConfig::new(&args.python, shim)).map_err(sandbox)?;
            Ok(Box::new(exec))
        }
    }
}

fn limits(args: &ExecArgs) -> Result<Limits, CliError> {
    let limits = Limits::with_timeout(args.timeout_secs);
    limits.check().map_err(input)?;
    Ok(limits)
}

fn reward_config(args: &ExecArgs) -> Result<RewardConfig, CliError> {
    if args.penalty_fine.is_nan() || args.penalty_fine > 0.0 {
        return Err(input(anyhow!("--penalty-fine must be <= 0, got {}", args.penalty_fine)));
    }
    Ok(RewardConfig {
        fine_penalty: args.penalty_fine,
        ..RewardConfig::default()
    })
}

fn print_json(value: &impl serde::Serialize) -> CmdResult {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(failure)?;
    writeln!(out).map_err(failure)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("cannot create {}", path.display()))
        .map_err(failure)
}

pub fn grade(args: GradeArgs) -> CmdResult {
    if args.k.contains(&0) {
        return Err(input(anyhow!("--k must be at least 1")));
    }
    let problems = dataset::load_problems(&args.dataset)
        .with_context(|| format!("reading {}", args.dataset.display()))
        .map_err(input)?;
    let candidates = dataset::load_candidates(&args.candidates)
        .with_context(|| format!("reading {}", args.candidates.display()))
        .map_err(input)?;
    let limits = limits(&args.exec)?;
    let rewards = reward_config(&args.exec)?;
    let runner = runner(&args.exec)?;
    let records = report::grade(&problems, candidates, runner.as_ref(), &limits, args.workers, &rewards)
        .map_err(|e| match e {
            e if e.is_sandbox_unavailable() => sandbox(e),
            e @ report::ReportError::UnknownProblem { .. } => input(e),
            e => failure(e),
        })?;
    let mut out = create(&args.out)?;
    report::write_records(&mut out, &records).map_err(failure)?;
    out.flush().map_err(failure)?;
    let estimator = if args.raw_best_of_k {
        Estimator::RawBestOfK
    } else {
        Estimator::Unbiased
    };
    let summary: GradeSummary = report::summarize(&records, &args.k, estimator).map_err(failure)?;
    print_json(&summary)
}

fn load_distribution(path: &Path) -> Result<ErrorDistribution, CliError> {
    let file = File::open(path)
        .with_context(|| format!("cannot open {}", path.display()))
        .map_err(input)?;
    let records = report::read_records(BufReader::new(file)).map_err(input)?;
    report::report(&records)
        .with_context(|| format!("{} has no records", path.display()))
        .map_err(input)
}

fn distribution_table(d: &ErrorDistribution) -> String {
    let mut s = format!("{} programs\n", d.total);
    for (v, f) in &d.verdicts {
        s += &format!("  {:<22}{:>7.1}%\n", v.as_str(), 100.0 * f);
    }
    if !d.sub_errors.is_empty() {
        s += "errors by kind:\n";
        for (k, f) in &d.sub_errors {
            s += &format!("  {:<22}{:>7.1}%\n", k.as_str(), 100.0 * f);
        }
    }
    s
}

fn comparison_table(c: &Comparison) -> String {
    let mut s = format!("{:<24}{:>9}{:>9}{:>9}\n", "", "before", "after", "delta");
    let rows = c
        .verdicts
        .iter()
        .map(|(v, d)| (v.as_str(), d))
        .chain(c.sub_errors.iter().map(|(k, d)| (k.as_str(), d)));
    for (name, d) in rows {
        s += &format!(
            "{:<24}{:>8.1}%{:>8.1}%{:>+8.1}%\n",
            name,
            100.0 * d.before,
            100.0 * d.after,
            100.0 * d.delta
        );
    }
    s
}

pub fn report(args: ReportArgs) -> CmdResult {
    let before = load_distribution(&args.grading)?;
    match &args.compare {
        None if args.table => print!("{}", distribution_table(&before)),
        None => print_json(&before)?,
        Some(other) => {
            let cmp = report::compare(&before, &load_distribution(other)?);
            if args.table {
                print!("{}", comparison_table(&cmp));
            } else {
                print_json(&cmp)?;
            }
        }
    }
    Ok(())
}

pub fn classify(args: ClassifyArgs) -> CmdResult {
    let source = std::fs::read_to_string(&args.source)
        .with_context(|| format!("cannot read {}", args.source.display()))
        .map_err(input)?;
    let problem = match (&args.tests, &args.dataset, &args.problem) {
        (Some(tests), _, _) => {
            let text = std::fs::read_to_string(tests)
                .with_context(|| format!("cannot read {}", tests.display()))
                .map_err(input)?;
            let tests: Vec<TestCase> = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", args.tests.as_ref().unwrap().display()))
                .map_err(input)?;
            Problem {
                id: "cli".into(),
                description: String::new(),
                tests,
                ground_truth: None,
                max_tokens: usize::MAX,
            }
        }
        (None, Some(path), Some(id)) => dataset::load_problems(path)
            .map_err(input)?
            .into_iter()
            .find(|p| &p.id == id)
            .ok_or_else(|| input(anyhow!("problem {id:?} not in {}", path.display())))?,
        _ => return Err(input(anyhow!("pass --tests, or --dataset with --problem"))),
    };
    if problem.tests.is_empty() {
        return Err(input(anyhow!("no tests to run")));
    }
    let limits = limits(&args.exec)?;
    let rewards = reward_config(&args.exec)?;
    let runner = runner(&args.exec)?;
    let mut candidate = CandidateProgram::from_source(source);
    candidate.truncated = args.truncated;
    let outcomes = runner
        .run(&problem, &candidate, &limits)
        .map_err(|e| match e {
            SandboxError::SandboxUnavailable(_) => sandbox(e),
            e => failure(e),
        })?;
    let feedback = execfeedback::classify(&problem, &candidate, &outcomes).map_err(failure)?;
    let bundle = reward::bundle(&feedback, &candidate, &rewards).map_err(failure)?;
    print_json(&json!({ "feedback": feedback, "rewards": bundle }))
}

pub fn serve_buffer(args: ServeArgs) -> CmdResult {
    let buffer = Arc::new(OnlineBuffer::new(args.capacity).map_err(input)?);
    let server = BufferServer::bind(&args.bind, buffer)
        .with_context(|| format!("cannot bind {}", args.bind))
        .map_err(failure)?;
    let addr = server.local_addr().map_err(failure)?;
    tracing::info!(%addr, capacity = args.capacity, "buffer listening");
    server.serve().map_err(failure)
}

pub fn train_demo(args: TrainArgs) -> CmdResult {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))
                .map_err(input)?;
            serde_json::from_str::<ExperimentConfig>(&text)
                .with_context(|| format!("parsing {}", path.display()))
                .map_err(input)?
        }
        None => ExperimentConfig::ablation_preset(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(t) = args.temperature {
        config.temperature = t;
    }
    if let Some(steps) = args.steps {
        config.steps = steps;
    }
    if let Some(w) = args.workers {
        config.workers = w;
    }
    let problems = match &args.dataset {
        Some(path) => dataset::load_problems(path).map_err(input)?,
        None => suite::problems(),
    };
    let result = experiment::run_experiment(&config, &problems).map_err(|e| match e {
        e @ (experiment::ExperimentError::InvalidConfig(_)
        | experiment::ExperimentError::UnencodableGroundTruth(_)) => input(e),
        e => failure(e),
    })?;
    let mut out = create(&args.out)?;
    result.write_jsonl(&mut out).map_err(failure)?;
    out.flush().map_err(failure)?;
    print_json(&json!({
        "steps": config.steps,
        "initial": result.initial_eval,
        "final": result.final_eval,
    }))
}
