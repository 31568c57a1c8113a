//! [`TestRunner`] backed by the in-process interpreter.

use std::time::Instant;

use super::interp::{self, ToyOutcome, DEFAULT_STEP_BUDGET};
use crate::sandbox::{Limits, RawTestOutcome, RunStatus, SandboxError, TestRunner};
use crate::types::{CandidateProgram, Problem};

#[derive(Debug, Clone, Copy)]
pub struct ToyRuntime {
    /// Interpreter steps allowed per test; running out is a timeout.
    pub step_budget: u64,
}

impl Default for ToyRuntime {
    fn default() -> Self {
        ToyRuntime {
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }
}

impl TestRunner for ToyRuntime {
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
        let compiled = interp::compile(&candidate.source);
        let mut out = Vec::with_capacity(problem.tests.len());
        for (i, test) in problem.tests.iter().enumerate() {
            let started = Instant::now();
            let run = match &compiled {
                Ok(program) => program.run(&test.input, self.step_budget),
                Err(e) => interp::ToyRun {
                    stdout: String::new(),
                    outcome: ToyOutcome::Raised(interp::compile_error_report(
                        e,
                        &candidate.source,
                        candidate.truncated,
                    )),
                },
            };
            let elapsed = started.elapsed().as_secs_f64();
            let outcome = match run.outcome {
                ToyOutcome::Ok => RawTestOutcome {
                    wall_time: elapsed,
                    ..RawTestOutcome::ok(i, run.stdout)
                },
                ToyOutcome::Raised(err) => RawTestOutcome {
                    stdout: run.stdout,
                    wall_time: elapsed,
                    ..RawTestOutcome::runtime_error(i, err)
                },
                ToyOutcome::Timeout => RawTestOutcome {
                    test_index: i,
                    status: RunStatus::Timeout,
                    stdout: run.stdout,
                    stderr: String::new(),
                    structured_error: None,
                    wall_time: limits.per_test_seconds,
                },
            };
            let stop = limits.early_stop
                && !(outcome.status == RunStatus::Ok && test.accepts(&outcome.stdout));
            out.push(outcome);
            if stop {
                break;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::classify;
    use crate::types::{Category, SubError, TestCase, Verdict};

    fn problem() -> Problem {
        Problem {
            id: "double".into(),
            description: String::new(),
            tests: vec![TestCase::new("1", "2"), TestCase::new("5", "10"), TestCase::new("0", "0")],
            ground_truth: None,
            max_tokens: 32,
        }
    }

    fn grade(src: &str) -> crate::types::Feedback {
        let c = CandidateProgram::from_source(src);
        let outcomes = ToyRuntime::default().run(&problem(), &c, &Limits::default()).unwrap();
        classify(&problem(), &c, &outcomes).unwrap()
    }

    #[test]
    fn verdicts() {
        assert_eq!(grade("print(int(input()) * 2)").verdict, Verdict::Pass);
        let fb = grade("print(int(input()) + 3)");
        assert_eq!((fb.verdict, fb.n_pass), (Verdict::Failure, 0));
        let fb = grade("n = int(input())\nprint(m)");
        assert_eq!(fb.verdict, Verdict::Error);
        assert_eq!(fb.sub_error, Some(SubError::NameError));
        assert_eq!((fb.category, fb.error_line), (Some(Category::Line), Some(2)));
        let fb = grade("while 1:\n    pass");
        assert_eq!(fb.sub_error, Some(SubError::TimeoutError));
    }

    #[test]
    fn early_stop_truncates_outcomes() {
        let c = CandidateProgram::from_source("print(2)");
        let limits = Limits {
            early_stop: true,
            ..Limits::default()
        };
        let outcomes = ToyRuntime::default().run(&problem(), &c, &limits).unwrap();
        assert_eq!(outcomes.len(), 2);
        let fb = classify(&problem(), &c, &outcomes).unwrap();
        assert_eq!((fb.n_pass, fb.n_fail), (1, 2));
    }

    #[test]
    fn invalid_limits_are_rejected() {
        let c = CandidateProgram::from_source("print(2)");
        let r = ToyRuntime::default().run(&problem(), &c, &Limits::with_timeout(0.0));
        assert!(matches!(r, Err(SandboxError::InvalidLimits(_))));
    }
}
