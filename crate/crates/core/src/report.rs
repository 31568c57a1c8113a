//! Grading corpora, summarizing them, and comparing outcome distributions.
//!
//! Grading file: one [`GradeRecord`] per line.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{self, error_distribution, ClassifyError, ErrorDistribution};
use crate::dataset::CandidateRecord;
use crate::passk::{self, InvalidCounts};
use crate::reward::{self, RewardConfig, RewardError};
use crate::sandbox::{execute_batch, Limits, SandboxError, TestRunner};
use crate::types::{Feedback, Problem, RewardBundle, SubError, Verdict};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("candidate {index} refers to unknown problem {problem_id:?}")]
    UnknownProblem { index: usize, problem_id: String },
    #[error("candidate {index}: {source}")]
    Sandbox { index: usize, source: SandboxError },
    #[error("candidate {index}: {source}")]
    Classify { index: usize, source: ClassifyError },
    #[error("candidate {index}: {source}")]
    Reward { index: usize, source: RewardError },
    #[error(transparent)]
    PassAtK(#[from] InvalidCounts),
    #[error(transparent)]
    Distribution(#[from] ClassifyError),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ReportError {
    /// True when the failure is the sandbox itself rather than the inputs.
    pub fn is_sandbox_unavailable(&self) -> bool {
        matches!(
            self,
            ReportError::Sandbox {
                source: SandboxError::SandboxUnavailable(_),
                ..
            }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeRecord {
    pub problem_id: String,
    /// Position of the candidate in the candidates file.
    pub candidate_index: usize,
    pub feedback: Feedback,
    pub rewards: RewardBundle,
    /// Summed wall time of the executed tests, in seconds.
    pub wall_time: f64,
}

/// Runs and classifies every candidate. Records come back in candidate order.
pub fn grade<R: TestRunner + ?Sized>(
    problems: &[Problem],
    candidates: Vec<CandidateRecord>,
    runner: &R,
    limits: &Limits,
    workers: usize,
    reward_config: &RewardConfig,
) -> Result<Vec<GradeRecord>, ReportError> {
    let by_id: HashMap<&str, &Problem> = problems.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut jobs = Vec::with_capacity(candidates.len());
    for (index, rec) in candidates.into_iter().enumerate() {
        let problem = *by_id
            .get(rec.problem_id.as_str())
            .ok_or_else(|| ReportError::UnknownProblem {
                index,
                problem_id: rec.problem_id.clone(),
            })?;
        jobs.push((problem, rec.into_candidate()));
    }
    let refs: Vec<_> = jobs.iter().map(|(p, c)| (*p, c)).collect();
    let results = execute_batch(runner, &refs, limits, workers);
    let mut out = Vec::with_capacity(jobs.len());
    for (index, ((problem, candidate), result)) in jobs.iter().zip(results).enumerate() {
        let outcomes = result.map_err(|source| ReportError::Sandbox { index, source })?;
        let feedback = classify::classify(problem, candidate, &outcomes)
            .map_err(|source| ReportError::Classify { index, source })?;
        let rewards = reward::bundle(&feedback, candidate, reward_config)
            .map_err(|source| ReportError::Reward { index, source })?;
        out.push(GradeRecord {
            problem_id: problem.id.clone(),
            candidate_index: index,
            feedback,
            rewards,
            wall_time: outcomes.iter().map(|o| o.wall_time).sum(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Unbiased,
    /// Whether any of the first k samples, in file order, passed.
    RawBestOfK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtK {
    pub k: usize,
    /// Mean over the problems with at least `k` candidates.
    pub value: f64,
    pub problems: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeSummary {
    pub n_problems: usize,
    pub n_candidates: usize,
    pub estimator: Estimator,
    /// Absent when there were no candidates.
    pub distribution: Option<ErrorDistribution>,
    pub pass_at_k: Vec<PassAtK>,
}

pub fn summarize(records: &[GradeRecord], ks: &[usize], estimator: Estimator) -> Result<GradeSummary, ReportError> {
    let mut per_problem: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    let mut ordered: Vec<&GradeRecord> = records.iter().collect();
    ordered.sort_by_key(|r| r.candidate_index);
    for r in &ordered {
        per_problem
            .entry(r.problem_id.as_str())
            .or_default()
            .push(r.feedback.verdict == Verdict::Pass);
    }
    let mut pass_at_k = Vec::new();
    for &k in ks.iter().collect::<BTreeSet<_>>() {
        let mut sum = 0.0;
        let mut count = 0;
        for correct in per_problem.values().filter(|c| c.len() >= k) {
            let n = correct.len();
            let c = correct.iter().filter(|&&x| x).count();
            sum += match estimator {
                Estimator::Unbiased => passk::pass_at_k(n, c, k)?,
                Estimator::RawBestOfK => passk::best_of_k(correct, k)?,
            };
            count += 1;
        }
        pass_at_k.push(PassAtK {
            k,
            value: if count == 0 { 0.0 } else { sum / count as f64 },
            problems: count,
        });
    }
    let feedbacks: Vec<Feedback> = records.iter().map(|r| r.feedback.clone()).collect();
    Ok(GradeSummary {
        n_problems: per_problem.len(),
        n_candidates: records.len(),
        estimator,
        distribution: if feedbacks.is_empty() {
            None
        } else {
            Some(error_distribution(&feedbacks)?)
        },
        pass_at_k,
    })
}

pub fn write_records<W: Write>(mut out: W, records: &[GradeRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<GradeRecord>, ReportError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| ReportError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

/// Distribution of a grading file's feedback.
pub fn report(records: &[GradeRecord]) -> Result<ErrorDistribution, ReportError> {
    let feedbacks: Vec<Feedback> = records.iter().map(|r| r.feedback.clone()).collect();
    Ok(error_distribution(&feedbacks)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub before: f64,
    pub after: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub verdicts: BTreeMap<Verdict, Delta>,
    pub sub_errors: BTreeMap<SubError, Delta>,
}

fn deltas<K: Ord + Copy>(a: &BTreeMap<K, f64>, b: &BTreeMap<K, f64>) -> BTreeMap<K, Delta> {
    a.keys()
        .chain(b.keys())
        .map(|&k| {
            let before = a.get(&k).copied().unwrap_or(0.0);
            let after = b.get(&k).copied().unwrap_or(0.0);
            (
                k,
                Delta {
                    before,
                    after,
                    delta: after - before,
                },
            )
        })
        .collect()
}

/// Per-verdict and per-sub-error changes from `before` to `after`.
pub fn compare(before: &ErrorDistribution, after: &ErrorDistribution) -> Comparison {
    Comparison {
        verdicts: deltas(&before.verdicts, &after.verdicts),
        sub_errors: deltas(&before.sub_errors, &after.sub_errors),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::runtime::ToyRuntime;
    use crate::types::{Category, TestCase};
    use approx::assert_abs_diff_eq;

    fn problem() -> Problem {
        Problem {
            id: "double".into(),
            description: String::new(),
            tests: vec![TestCase::new("1\n", "2"), TestCase::new("4\n", "8")],
            ground_truth: None,
            max_tokens: 32,
        }
    }

    fn cand(src: &str) -> CandidateRecord {
        CandidateRecord {
            problem_id: "double".into(),
            source: src.into(),
            tokens: None,
            token_char_spans: None,
            logprobs: None,
            truncated: false,
        }
    }

    fn record(problem_id: &str, index: usize, feedback: Feedback) -> GradeRecord {
        GradeRecord {
            problem_id: problem_id.into(),
            candidate_index: index,
            feedback,
            rewards: RewardBundle {
                r_coarse: 0.0,
                r_fine: 0.0,
                r_adaptive: 0.0,
                span_coarse: Default::default(),
                span_fine: Default::default(),
                span_adaptive: Default::default(),
                fine_weight: 0.0,
                adaptive_active: true,
            },
            wall_time: 0.0,
        }
    }

    #[test]
    fn grades_in_candidate_order() {
        let cands = vec![cand("print(int(input()) * 2)"), cand("print(x)"), cand("print(1")];
        let recs = grade(&[problem()], cands, &ToyRuntime::default(), &Limits::default(), 2, &RewardConfig::default()).unwrap();
        let verdicts: Vec<_> = recs.iter().map(|r| r.feedback.verdict).collect();
        assert_eq!(verdicts, [Verdict::Pass, Verdict::Error, Verdict::Error]);
        assert_eq!(recs[1].rewards.r_coarse, -0.6);
        assert_eq!(recs[2].rewards.r_coarse, -1.0);
        let s = summarize(&recs, &[1], Estimator::Unbiased).unwrap();
        assert_abs_diff_eq!(s.pass_at_k[0].value, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn unknown_problem_is_an_input_error() {
        let mut c = cand("print(1)");
        c.problem_id = "nope".into();
        let r = grade(&[problem()], vec![c], &ToyRuntime::default(), &Limits::default(), 1, &RewardConfig::default());
        assert!(matches!(r, Err(ReportError::UnknownProblem { index: 0, .. })));
    }

    #[test]
    fn empty_corpus_summary() {
        let s = summarize(&[], &[1, 5], Estimator::Unbiased).unwrap();
        assert_eq!((s.n_problems, s.n_candidates), (0, 0));
        assert!(s.distribution.is_none());
        assert!(s.pass_at_k.iter().all(|p| p.problems == 0 && p.value == 0.0));
        assert!(matches!(report(&[]), Err(ReportError::Distribution(ClassifyError::EmptyInput))));
    }

    #[test]
    fn two_of_five_pass_at_two() {
        let mut recs = Vec::new();
        for (pid, base) in [("a", 0), ("b", 5)] {
            for i in 0..5 {
                let fb = if i < 2 { Feedback::pass(1) } else { Feedback::failure(0, 1) };
                recs.push(record(pid, base + i, fb));
            }
        }
        let s = summarize(&recs, &[2, 2, 6], Estimator::Unbiased).unwrap();
        assert_eq!(s.pass_at_k.len(), 2);
        // 1 - C(3,2)/C(5,2)
        assert_abs_diff_eq!(s.pass_at_k[0].value, 1.0 - 3.0 / 10.0, epsilon = 1e-12);
        assert_eq!(s.pass_at_k[1].problems, 0);
        let raw = summarize(&recs, &[2], Estimator::RawBestOfK).unwrap();
        assert_eq!(raw.pass_at_k[0].value, 1.0);
    }

    #[test]
    fn records_round_trip() {
        let recs = vec![record("a", 0, Feedback::pass(2)), record("a", 1, Feedback::failure(1, 1))];
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        assert_eq!(read_records(buf.as_slice()).unwrap(), recs);
        assert!(matches!(read_records(&b"{\n"[..]), Err(ReportError::Parse { line: 1, .. })));
    }

    #[test]
    fn comparison_deltas() {
        let syntax = || Feedback::error(SubError::SyntaxError, Category::Line, Some(1), 0, 1);
        let name = || Feedback::error(SubError::NameError, Category::Line, Some(1), 0, 1);
        let before: Vec<_> = (0..10)
            .map(|i| record("a", i, if i < 3 { syntax() } else { name() }))
            .collect();
        let after: Vec<_> = (0..10)
            .map(|i| record("a", i, if i < 1 { syntax() } else { name() }))
            .collect();
        let cmp = compare(&report(&before).unwrap(), &report(&after).unwrap());
        assert_abs_diff_eq!(cmp.sub_errors[&SubError::SyntaxError].delta, -0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(cmp.sub_errors[&SubError::NameError].delta, 0.2, epsilon = 1e-12);
        let same = compare(&report(&before).unwrap(), &report(&before).unwrap());
        assert!(same.verdicts.values().chain(same.sub_errors.values()).all(|d| d.delta == 0.0));
    }
}
