//! Turns raw per-test outcomes into one verdict, routes errors to a penalty
//! category and locates the token span a fine-grained penalty applies to.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sandbox::{RawTestOutcome, RunStatus};
use crate::types::{CandidateProgram, Category, Feedback, Problem, Span, SubError, Verdict};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClassifyError {
    #[error("got {outcomes} outcomes for {tests} tests")]
    MismatchedOutcomeCount { tests: usize, outcomes: usize },
    #[error("error line {line} outside source of {lines} lines")]
    LineOutOfRange { line: usize, lines: usize },
    #[error("span requested for a {0} verdict")]
    NotAnError(Verdict),
    #[error("error distribution of an empty list")]
    EmptyInput,
}

/// Category routing for each error kind. Syntax errors caused by running
/// out of generation budget are charged to the whole program.
pub fn category_for(kind: SubError, truncated_guess: bool) -> Category {
    match kind {
        SubError::TimeoutError | SubError::RecursionError => Category::Whole,
        SubError::TripleQuotedError | SubError::IndentationError => Category::Ignore,
        SubError::SyntaxError if truncated_guess => Category::Whole,
        _ => Category::Line,
    }
}

/// One verdict for the whole program.
///
/// Error outranks Failure outranks Pass; the lowest-index erroring test
/// decides the sub-error and line. Erroring tests count as failed.
///
/// `outcomes` may stop short of the test list only after a non-passing
/// outcome (early stop); skipped tests count as failed.
pub fn classify(
    problem: &Problem,
    candidate: &CandidateProgram,
    outcomes: &[RawTestOutcome],
) -> Result<Feedback, ClassifyError> {
    let n_tests = problem.tests.len();
    let mismatch = ClassifyError::MismatchedOutcomeCount {
        tests: n_tests,
        outcomes: outcomes.len(),
    };
    if outcomes.len() > n_tests || outcomes.is_empty() && n_tests > 0 {
        return Err(mismatch);
    }

    let mut n_pass = 0;
    let mut first_error: Option<&RawTestOutcome> = None;
    let mut last_passed = false;
    for (outcome, test) in outcomes.iter().zip(&problem.tests) {
        last_passed = outcome.status == RunStatus::Ok && test.accepts(&outcome.stdout);
        if last_passed {
            n_pass += 1;
        }
        if first_error.is_none()
            && matches!(
                outcome.status,
                RunStatus::RuntimeError | RunStatus::Timeout | RunStatus::Crashed
            )
        {
            first_error = Some(outcome);
        }
    }
    if outcomes.len() < n_tests && last_passed {
        return Err(mismatch);
    }
    let n_fail = n_tests - n_pass;

    let Some(err) = first_error else {
        return Ok(if n_fail == 0 {
            Feedback::pass(n_pass)
        } else {
            Feedback::failure(n_pass, n_fail)
        });
    };

    let (kind, line, truncated_guess) = match (err.status, &err.structured_error) {
        (RunStatus::Timeout, _) => (SubError::TimeoutError, None, false),
        (RunStatus::RuntimeError, Some(e)) => (
            SubError::from_exception_name(&e.exception_name),
            e.line,
            e.truncated_guess,
        ),
        _ => (SubError::Else, None, false),
    };

    let lines = candidate.line_count();
    // Interpreters point end-of-input errors one past the last line.
    let line = line.filter(|&l| l >= 1 && lines >= 1).map(|l| l.min(lines));
    let truncated_guess = truncated_guess
        || (kind == SubError::SyntaxError && candidate.truncated && line == Some(lines));
    let mut category = category_for(kind, truncated_guess);
    if category == Category::Line && line.is_none() {
        // Nothing to localise: charge the whole program.
        category = Category::Whole;
    }
    Ok(Feedback::error(kind, category, line, n_pass, n_fail))
}

/// Token interval implicated by an error: the faulting line for `U_line`,
/// everything for `U_whole`, nothing for `U_ignore`.
pub fn locate_span(candidate: &CandidateProgram, feedback: &Feedback) -> Result<Span, ClassifyError> {
    if feedback.verdict != Verdict::Error {
        return Err(ClassifyError::NotAnError(feedback.verdict));
    }
    let t = candidate.len();
    match feedback.category {
        Some(Category::Whole) => Ok(Span::new(0, t)),
        Some(Category::Ignore) => Ok(Span::EMPTY),
        Some(Category::Line) | None => {
            let lines = candidate.line_count();
            let line = feedback.error_line.unwrap_or(0);
            let bytes = candidate
                .line_byte_range(line)
                .filter(|_| line <= lines)
                .ok_or(ClassifyError::LineOutOfRange { line, lines })?;
            let mut hit = candidate
                .token_char_spans
                .iter()
                .enumerate()
                .filter(|(_, s)| s.intersects(&bytes))
                .map(|(i, _)| i);
            let Some(first) = hit.next() else {
                return Ok(Span::EMPTY);
            };
            let last = hit.next_back().unwrap_or(first);
            Ok(Span::new(first, last + 1))
        }
    }
}

/// Verdict and sub-error shares over a set of feedbacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistribution {
    pub total: usize,
    /// Fractions over all feedbacks; only observed verdicts appear.
    pub verdicts: BTreeMap<Verdict, f64>,
    /// Fractions over Error-verdict feedbacks; empty when none erred.
    pub sub_errors: BTreeMap<SubError, f64>,
    pub verdict_counts: BTreeMap<Verdict, usize>,
    pub sub_error_counts: BTreeMap<SubError, usize>,
}

pub fn error_distribution(feedbacks: &[Feedback]) -> Result<ErrorDistribution, ClassifyError> {
    if feedbacks.is_empty() {
        return Err(ClassifyError::EmptyInput);
    }
    let mut verdict_counts = BTreeMap::new();
    let mut sub_error_counts = BTreeMap::new();
    for fb in feedbacks {
        *verdict_counts.entry(fb.verdict).or_insert(0) += 1;
        if fb.verdict == Verdict::Error {
            let kind = fb.sub_error.unwrap_or(SubError::Else);
            *sub_error_counts.entry(kind).or_insert(0) += 1;
        }
    }
    let total = feedbacks.len();
    let n_errors: usize = sub_error_counts.values().sum();
    let verdicts = verdict_counts
        .iter()
        .map(|(&v, &c)| (v, c as f64 / total as f64))
        .collect();
    let sub_errors = sub_error_counts
        .iter()
        .map(|(&k, &c)| (k, c as f64 / n_errors as f64))
        .collect();
    Ok(ErrorDistribution {
        total,
        verdicts,
        sub_errors,
        verdict_counts,
        sub_error_counts,
    })
}
