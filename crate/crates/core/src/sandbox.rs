//! Runs candidates against unit tests in child processes.
//!
//! Each test gets a fresh interpreter process in its own scratch directory
//! and process group. The process group is killed on timeout and again
//! after a normal exit so that stray children cannot outlive the test.
//!
//! The child is the shim runner: `python <shim> candidate.py [--truncated]`
//! with the test input on stdin. The shim writes one report line, prefixed
//! with [`REPORT_SENTINEL`], as the last line on stderr:
//!
//! ```text
//! __EXECFB_REPORT__ {"ok": true}
//! __EXECFB_REPORT__ {"exception": "NameError", "message": "...", "line": 3}
//! ```

use std::io::{Read, Write};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::types::{CandidateProgram, Problem};

pub const REPORT_SENTINEL: &str = "__EXECFB_REPORT__";
pub const ENV_PYTHON: &str = "EXECFB_PYTHON";
pub const ENV_SHIM: &str = "EXECFB_SHIM";
pub const DEFAULT_PER_TEST_SECONDS: f64 = 10.0;

/// Captured output beyond this many bytes per stream is dropped.
const OUTPUT_CAP: usize = 8 << 20;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("sandbox unavailable: {0}")]
    SandboxUnavailable(String),
    #[error("sandbox i/o failure: {0}")]
    InternalIo(#[from] std::io::Error),
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
    #[error("problem {0} has no tests")]
    NoTests(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    WrongOutput,
    RuntimeError,
    Timeout,
    Crashed,
}

/// Error record emitted by the shim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredError {
    #[serde(rename = "exception")]
    pub exception_name: String,
    #[serde(default)]
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated_guess: bool,
}

impl StructuredError {
    pub fn new(name: impl Into<String>, message: impl Into<String>, line: Option<usize>) -> Self {
        StructuredError {
            exception_name: name.into(),
            message: message.into(),
            line,
            truncated_guess: false,
        }
    }
}

/// The raw report line as the shim writes it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShimReport {
    #[serde(default)]
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exception: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated_guess: bool,
}

impl ShimReport {
    pub fn ok() -> Self {
        ShimReport {
            ok: true,
            exception: None,
            message: None,
            line: None,
            truncated_guess: false,
        }
    }

    /// The structured error carried by a failing report. A report that is
    /// neither ok nor names an exception is treated as an unnamed error.
    pub fn into_error(self) -> Option<StructuredError> {
        if self.ok {
            return None;
        }
        Some(StructuredError {
            exception_name: self.exception.unwrap_or_else(|| "Exception".to_string()),
            message: self.message.unwrap_or_default(),
            line: self.line,
            truncated_guess: self.truncated_guess,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTestOutcome {
    pub test_index: usize,
    pub status: RunStatus,
    pub stdout: String,
    pub stderr: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured_error: Option<StructuredError>,
    /// Seconds.
    pub wall_time: f64,
}

impl RawTestOutcome {
    pub fn ok(test_index: usize, stdout: impl Into<String>) -> Self {
        RawTestOutcome {
            test_index,
            status: RunStatus::Ok,
            stdout: stdout.into(),
            stderr: String::new(),
            structured_error: None,
            wall_time: 0.0,
        }
    }

    pub fn runtime_error(test_index: usize, error: StructuredError) -> Self {
        RawTestOutcome {
            test_index,
            status: RunStatus::RuntimeError,
            stdout: String::new(),
            stderr: String::new(),
            structured_error: Some(error),
            wall_time: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub per_test_seconds: f64,
    #[serde(default)]
    pub memory_bytes: Option<u64>,
    /// Stop after the first non-ok test. Off by default: the adaptive
    /// reward needs the full pass/fail tally.
    #[serde(default)]
    pub early_stop: bool,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            per_test_seconds: DEFAULT_PER_TEST_SECONDS,
            memory_bytes: None,
            early_stop: false,
        }
    }
}

impl Limits {
    pub fn with_timeout(seconds: f64) -> Self {
        Limits {
            per_test_seconds: seconds,
            ..Limits::default()
        }
    }

    pub fn check(&self) -> Result<(), SandboxError> {
        if !(self.per_test_seconds > 0.0 && self.per_test_seconds.is_finite()) {
            return Err(SandboxError::InvalidLimits(format!(
                "per_test_seconds must be positive, got {}",
                self.per_test_seconds
            )));
        }
        Ok(())
    }
}

/// Anything that can turn (problem, candidate) into per-test outcomes.
pub trait TestRunner: Send + Sync {
    fn run(
        &self,
        problem: &Problem,
        candidate: &CandidateProgram,
        limits: &Limits,
    ) -> Result<Vec<RawTestOutcome>, SandboxError>;
}

/// Runs each job on `runner` using a pool of `workers` threads. Results are
/// positionally aligned with `jobs`.
pub fn execute_batch<R: TestRunner + ?Sized>(
    runner: &R,
    jobs: &[(&Problem, &CandidateProgram)],
    limits: &Limits,
    workers: usize,
) -> Vec<Result<Vec<RawTestOutcome>, SandboxError>> {
    use rayon::prelude::*;
    if jobs.is_empty() {
        return Vec::new();
    }
    let workers = workers.max(1);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool,
        Err(e) => {
            tracing::warn!("falling back to sequential execution: {e}");
            return jobs
                .iter()
                .map(|(p, c)| runner.run(p, c, limits))
                .collect();
        }
    };
    pool.install(|| {
        jobs.par_iter()
            .map(|(p, c)| runner.run(p, c, limits))
            .collect()
    })
}

#[derive(Debug, Clone)]
pub struct SandboxConfig {
    pub python: PathBuf,
    pub shim: PathBuf,
    /// Parent directory for per-test scratch directories.
    pub scratch_root: PathBuf,
}

impl SandboxConfig {
    pub fn new(python: impl Into<PathBuf>, shim: impl Into<PathBuf>) -> Self {
        SandboxConfig {
            python: python.into(),
            shim: shim.into(),
            scratch_root: std::env::temp_dir(),
        }
    }

    /// Reads `EXECFB_PYTHON` (default `python3`) and `EXECFB_SHIM`.
    pub fn from_env() -> Result<Self, SandboxError> {
        let python = std::env::var_os(ENV_PYTHON).unwrap_or_else(|| "python3".into());
        let shim = std::env::var_os(ENV_SHIM).ok_or_else(|| {
            SandboxError::SandboxUnavailable(format!("{ENV_SHIM} is not set"))
        })?;
        Ok(SandboxConfig::new(python, shim))
    }
}

/// Child-process executor speaking the shim protocol.
#[derive(Debug, Clone)]
pub struct SubprocessExecutor {
    config: SandboxConfig,
}

impl SubprocessExecutor {
    /// Verifies that the shim exists and the interpreter starts.
    pub fn new(config: SandboxConfig) -> Result<Self, SandboxError> {
        if !config.shim.is_file() {
            return Err(SandboxError::SandboxUnavailable(format!(
                "shim not found at {}",
                config.shim.display()
            )));
        }
        let probe = Command::new(&config.python)
            .arg("-c")
            .arg("pass")
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status();
        match probe {
            Ok(status) if status.success() => {}
            Ok(status) => {
                return Err(SandboxError::SandboxUnavailable(format!(
                    "interpreter {} exited with {status}",
                    config.python.display()
                )))
            }
            Err(e) => {
                return Err(SandboxError::SandboxUnavailable(format!(
                    "cannot start interpreter {}: {e}",
                    config.python.display()
                )))
            }
        }
        Ok(SubprocessExecutor { config })
    }

    pub fn from_env() -> Result<Self, SandboxError> {
        SubprocessExecutor::new(SandboxConfig::from_env()?)
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    fn run_one(
        &self,
        scratch: &Path,
        candidate: &CandidateProgram,
        test_index: usize,
        input: &str,
        limits: &Limits,
    ) -> Result<RawTestOutcome, SandboxError> {
        let mut cmd = Command::new(&self.config.python);
        cmd.arg(&self.config.shim)
            .arg("candidate.py")
            .current_dir(scratch)
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONHASHSEED", "0")
            .env("PYTHONIOENCODING", "utf-8")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);
        if candidate.truncated {
            cmd.arg("--truncated");
        }
        if let Some(bytes) = limits.memory_bytes {
            // SAFETY: setrlimit is async-signal-safe and touches no
            // parent-process state.
            unsafe {
                cmd.pre_exec(move || {
                    let lim = libc::rlimit {
                        rlim_cur: bytes as libc::rlim_t,
                        rlim_max: bytes as libc::rlim_t,
                    };
                    if libc::setrlimit(libc::RLIMIT_AS, &lim) != 0 {
                        return Err(std::io::Error::last_os_error());
                    }
                    Ok(())
                });
            }
        }

        let started = Instant::now();
        let mut child = cmd.spawn().map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                SandboxError::SandboxUnavailable(format!(
                    "cannot start {}: {e}",
                    self.config.python.display()
                ))
            } else {
                SandboxError::InternalIo(e)
            }
        })?;
        let pgid = child.id() as libc::pid_t;

        let mut stdin = child.stdin.take().expect("stdin piped");
        let input = input.as_bytes().to_vec();
        let writer = thread::spawn(move || {
            // The candidate may exit without reading; a broken pipe is fine.
            let _ = stdin.write_all(&input);
        });
        let stdout = child.stdout.take().expect("stdout piped");
        let stderr = child.stderr.take().expect("stderr piped");
        let out_reader = thread::spawn(move || read_capped(stdout));
        let err_reader = thread::spawn(move || read_capped(stderr));

        let limit = Duration::from_secs_f64(limits.per_test_seconds);
        let waited = child.wait_timeout(limit)?;
        let (exit, timed_out) = match waited {
            Some(status) => (Some(status), false),
            None => {
                kill_group(pgid);
                let _ = child.wait()?;
                (None, true)
            }
        };
        // Reap anything the candidate left behind in its group.
        kill_group(pgid);
        let wall_time = started.elapsed().as_secs_f64();

        let _ = writer.join();
        let stdout = out_reader.join().unwrap_or_default();
        let stderr = err_reader.join().unwrap_or_default();
        let (stderr, report) = split_report(&stderr);

        let (status, structured_error) = if timed_out {
            (RunStatus::Timeout, None)
        } else {
            match report {
                Some(r) if r.ok => (RunStatus::Ok, None),
                Some(r) => (RunStatus::RuntimeError, r.into_error()),
                None => {
                    let exit = exit.expect("exit status present when not timed out");
                    if exit.success() {
                        (RunStatus::Ok, None)
                    } else {
                        if let Some(sig) = exit.signal() {
                            tracing::debug!(test_index, sig, "candidate killed by signal");
                        }
                        (RunStatus::Crashed, None)
                    }
                }
            }
        };
        Ok(RawTestOutcome {
            test_index,
            status,
            stdout,
            stderr,
            structured_error,
            wall_time: if timed_out {
                wall_time.max(limits.per_test_seconds)
            } else {
                wall_time
            },
        })
    }
}

impl TestRunner for SubprocessExecutor {
    fn run(
        &self,
        problem: &Problem,
        candidate: &CandidateProgram,
        limits: &Limits,
    ) -> Result<Vec<RawTestOutcome>, SandboxError> {
        limits.check()?;
        if problem.tests.is_empty() {
            return Err(SandboxError::NoTests(problem.id.clone()));
        }
        let mut outcomes = Vec::with_capacity(problem.tests.len());
        for (i, test) in problem.tests.iter().enumerate() {
            let scratch = tempfile::Builder::new()
                .prefix("execfb-")
                .tempdir_in(&self.config.scratch_root)?;
            std::fs::write(scratch.path().join("candidate.py"), &candidate.source)?;
            let outcome = self.run_one(scratch.path(), candidate, i, &test.input, limits)?;
            let stop = limits.early_stop && outcome.status != RunStatus::Ok;
            outcomes.push(outcome);
            if stop {
                break;
            }
        }
        Ok(outcomes)
    }
}

fn kill_group(pgid: libc::pid_t) {
    // SAFETY: plain syscall; ESRCH when the group is already gone is fine.
    unsafe {
        libc::killpg(pgid, libc::SIGKILL);
    }
}

fn read_capped<R: Read>(mut r: R) -> String {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 8192];
    loop {
        match r.read(&mut chunk) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                if buf.len() < OUTPUT_CAP {
                    let take = n.min(OUTPUT_CAP - buf.len());
                    buf.extend_from_slice(&chunk[..take]);
                }
            }
        }
    }
    String::from_utf8_lossy(&buf).into_owned()
}

/// Separates the shim's report line from the rest of stderr. The last
/// sentinel line wins.
pub fn split_report(stderr: &str) -> (String, Option<ShimReport>) {
    let mut rest = String::with_capacity(stderr.len());
    let mut report = None;
    for line in stderr.split_inclusive('\n') {
        if let Some(payload) = line.trim_end().strip_prefix(REPORT_SENTINEL) {
            if let Ok(parsed) = serde_json::from_str::<ShimReport>(payload.trim()) {
                report = Some(parsed);
                continue;
            }
        }
        rest.push_str(line);
    }
    (rest, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_line_is_stripped() {
        let err = "warning\n__EXECFB_REPORT__ {\"exception\":\"NameError\",\"message\":\"name 'x' is not defined\",\"line\":1}\n";
        let (rest, report) = split_report(err);
        assert_eq!(rest, "warning\n");
        let e = report.unwrap().into_error().unwrap();
        assert_eq!(e.exception_name, "NameError");
        assert_eq!(e.line, Some(1));
    }

    #[test]
    fn ok_report_has_no_error() {
        let (_, report) = split_report("__EXECFB_REPORT__ {\"ok\": true}");
        assert_eq!(report, Some(ShimReport::ok()));
        assert!(report.unwrap().into_error().is_none());
    }

    #[test]
    fn garbage_sentinel_is_kept_as_text() {
        let (rest, report) = split_report("__EXECFB_REPORT__ {not json\n");
        assert!(report.is_none());
        assert_eq!(rest, "__EXECFB_REPORT__ {not json\n");
    }

    #[test]
    fn missing_shim_is_unavailable() {
        let err = SubprocessExecutor::new(SandboxConfig::new("python3", "/nonexistent/shim.py"))
            .unwrap_err();
        assert!(matches!(err, SandboxError::SandboxUnavailable(_)));
    }

    #[test]
    fn non_positive_limit_is_rejected() {
        assert!(Limits::with_timeout(0.0).check().is_err());
        assert!(Limits::with_timeout(f64::NAN).check().is_err());
        assert!(Limits::default().check().is_ok());
    }
}
