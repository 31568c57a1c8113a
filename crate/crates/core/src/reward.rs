//! Coarse, fine and adaptive rewards with their token spans, and the
//! per-problem best-so-far baseline.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{self, ClassifyError};
use crate::types::{BaselineRewards, CandidateProgram, Category, Feedback, RewardBundle, Span, Verdict};

pub const REWARD_PASS: f64 = 1.0;
pub const REWARD_FAILURE: f64 = -0.3;
pub const REWARD_ERROR: f64 = -0.6;
pub const REWARD_SYNTAX_ERROR: f64 = -1.0;
pub const DEFAULT_FINE_PENALTY: f64 = -0.3;
/// Adaptive reward is `ADAPTIVE_FLOOR + ADAPTIVE_SLOPE * pass_ratio`.
pub const ADAPTIVE_FLOOR: f64 = -0.3;
pub const ADAPTIVE_SLOPE: f64 = 1.3;
const ADAPTIVE_FLOOR_TENTHS: i64 = -3;
const ADAPTIVE_SLOPE_TENTHS: i64 = 13;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("non-ignore error with an empty fine span")]
    EmptySpanWithPenalty,
    #[error("adaptive reward needs at least one test")]
    ZeroTests,
    #[error("fine penalty must be <= 0, got {0}")]
    InvalidPenalty(f64),
    #[error(transparent)]
    Span(#[from] ClassifyError),
}

/// Which verdicts the adaptive term applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptiveScope {
    /// Every sample; erroring tests count as failed.
    #[default]
    AllVerdicts,
    /// Only samples that ran without error.
    NonError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub fine_penalty: f64,
    #[serde(default)]
    pub adaptive_scope: AdaptiveScope,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            fine_penalty: DEFAULT_FINE_PENALTY,
            adaptive_scope: AdaptiveScope::AllVerdicts,
        }
    }
}

pub fn coarse_reward(feedback: &Feedback) -> f64 {
    match feedback.verdict {
        Verdict::Pass => REWARD_PASS,
        Verdict::Failure => REWARD_FAILURE,
        Verdict::Error => match feedback.sub_error {
            Some(kind) if kind.is_syntax_family() => REWARD_SYNTAX_ERROR,
            _ => REWARD_ERROR,
        },
    }
}

/// The fine-span weight `T / (E - S)`, kept as an exact ratio so that
/// `weight * (E - S) == T` holds without rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineWeight {
    pub total_tokens: usize,
    pub span_len: usize,
}

impl FineWeight {
    /// `None` for an empty span (the fine term is then inactive).
    pub fn new(total_tokens: usize, span: Span) -> Option<Self> {
        (!span.is_empty()).then_some(FineWeight {
            total_tokens,
            span_len: span.len(),
        })
    }

    pub fn value(&self) -> f64 {
        self.total_tokens as f64 / self.span_len as f64
    }

    /// `weight * factor` as a reduced fraction `(numerator, denominator)`.
    pub fn times(&self, factor: usize) -> (usize, usize) {
        let num = self.total_tokens * factor;
        let den = self.span_len;
        let g = gcd(num, den);
        (num / g, den / g)
    }
}

impl fmt::Display for FineWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.total_tokens, self.span_len)
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Fine reward and its weight for the given span. Inactive (zero, zero)
/// for verdicts other than Error.
pub fn fine_reward(
    feedback: &Feedback,
    span: Span,
    total_tokens: usize,
    penalty: f64,
) -> Result<(f64, Option<FineWeight>), RewardError> {
    if penalty.is_nan() || penalty > 0.0 {
        return Err(RewardError::InvalidPenalty(penalty));
    }
    if feedback.verdict != Verdict::Error {
        return Ok((0.0, None));
    }
    if feedback.category == Some(Category::Ignore) {
        return Ok((0.0, FineWeight::new(total_tokens, span)));
    }
    match FineWeight::new(total_tokens, span) {
        Some(w) => Ok((penalty, Some(w))),
        None => Err(RewardError::EmptySpanWithPenalty),
    }
}

pub fn adaptive_reward(feedback: &Feedback) -> Result<f64, RewardError> {
    let n = feedback.n_pass + feedback.n_fail;
    if n == 0 {
        return Err(RewardError::ZeroTests);
    }
    // One correctly rounded division of exact integers.
    let (p, n) = (feedback.n_pass as i64, n as i64);
    let num = ADAPTIVE_FLOOR_TENTHS * n + ADAPTIVE_SLOPE_TENTHS * p;
    Ok(num as f64 / (10 * n) as f64)
}

/// All three rewards for a classified candidate.
pub fn bundle(
    feedback: &Feedback,
    candidate: &CandidateProgram,
    config: &RewardConfig,
) -> Result<RewardBundle, RewardError> {
    let t = candidate.len();
    let whole = Span::new(0, t);
    let (span_fine, r_fine, weight) = if feedback.verdict == Verdict::Error {
        let span = classify::locate_span(candidate, feedback)?;
        let (r, w) = fine_reward(feedback, span, t, config.fine_penalty)?;
        (span, r, w)
    } else {
        if config.fine_penalty.is_nan() || config.fine_penalty > 0.0 {
            return Err(RewardError::InvalidPenalty(config.fine_penalty));
        }
        (Span::EMPTY, 0.0, None)
    };
    let adaptive_active = match config.adaptive_scope {
        AdaptiveScope::AllVerdicts => true,
        AdaptiveScope::NonError => feedback.verdict != Verdict::Error,
    };
    Ok(RewardBundle {
        r_coarse: coarse_reward(feedback),
        r_fine,
        r_adaptive: adaptive_reward(feedback)?,
        span_coarse: whole,
        span_fine,
        span_adaptive: whole,
        fine_weight: weight.map_or(0.0, |w| w.value()),
        adaptive_active,
    })
}

/// Best sample seen so far for one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEntry {
    pub best_candidate_id: String,
    pub best_r_coarse: f64,
    pub best_r_adaptive: f64,
    pub updated_seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineUpdate {
    pub updated: bool,
    /// Baseline in force before this update (zeros for a new problem).
    pub prev: BaselineRewards,
}

#[derive(Debug, Error)]
pub enum BaselineIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Per-problem historical best, ranked by adaptive reward. Ties keep the
/// incumbent, so the stored best never decreases.
#[derive(Debug, Default)]
pub struct BaselineRegister {
    inner: Mutex<RegisterState>,
}

#[derive(Debug, Default)]
struct RegisterState {
    entries: HashMap<String, BaselineEntry>,
    seq: u64,
}

impl BaselineRegister {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, problem_id: &str) -> BaselineRewards {
        self.inner
            .lock()
            .entries
            .get(problem_id)
            .map(|e| BaselineRewards {
                r_coarse: e.best_r_coarse,
                r_adaptive: e.best_r_adaptive,
            })
            .unwrap_or_default()
    }

    pub fn entry(&self, problem_id: &str) -> Option<BaselineEntry> {
        self.inner.lock().entries.get(problem_id).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Compare-and-swap for one problem.
    pub fn update(&self, problem_id: &str, candidate_id: &str, bundle: &RewardBundle) -> BaselineUpdate {
        let mut state = self.inner.lock();
        state.seq += 1;
        let seq = state.seq;
        match state.entries.get_mut(problem_id) {
            Some(best) => {
                let prev = BaselineRewards {
                    r_coarse: best.best_r_coarse,
                    r_adaptive: best.best_r_adaptive,
                };
                let updated = bundle.r_adaptive > best.best_r_adaptive;
                if updated {
                    *best = BaselineEntry {
                        best_candidate_id: candidate_id.to_string(),
                        best_r_coarse: bundle.r_coarse,
                        best_r_adaptive: bundle.r_adaptive,
                        updated_seq: seq,
                    };
                }
                BaselineUpdate { updated, prev }
            }
            None => {
                state.entries.insert(
                    problem_id.to_string(),
                    BaselineEntry {
                        best_candidate_id: candidate_id.to_string(),
                        best_r_coarse: bundle.r_coarse,
                        best_r_adaptive: bundle.r_adaptive,
                        updated_seq: seq,
                    },
                );
                BaselineUpdate {
                    updated: true,
                    prev: BaselineRewards::default(),
                }
            }
        }
    }

    pub fn snapshot(&self) -> HashMap<String, BaselineEntry> {
        self.inner.lock().entries.clone()
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        let entries: std::collections::BTreeMap<_, _> = self.snapshot().into_iter().collect();
        serde_json::to_string_pretty(&entries)
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        let entries: HashMap<String, BaselineEntry> = serde_json::from_str(text)?;
        let seq = entries.values().map(|e| e.updated_seq).max().unwrap_or(0);
        Ok(BaselineRegister {
            inner: Mutex::new(RegisterState { entries, seq }),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), BaselineIoError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BaselineIoError> {
        Ok(Self::from_json(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SubError;

    fn error(kind: SubError, category: Category, n_pass: usize, n_fail: usize) -> Feedback {
        Feedback::error(kind, category, Some(1), n_pass, n_fail)
    }

    #[test]
    fn coarse_ladder() {
        assert_eq!(coarse_reward(&Feedback::pass(1)), 1.0);
        assert_eq!(coarse_reward(&Feedback::failure(0, 1)), -0.3);
        assert_eq!(coarse_reward(&error(SubError::NameError, Category::Line, 0, 1)), -0.6);
        assert_eq!(coarse_reward(&error(SubError::SyntaxError, Category::Line, 0, 1)), -1.0);
        assert_eq!(coarse_reward(&error(SubError::IndentationError, Category::Ignore, 0, 1)), -1.0);
        assert_eq!(coarse_reward(&error(SubError::TripleQuotedError, Category::Ignore, 0, 1)), -1.0);
    }

    #[test]
    fn fine_examples() {
        let fb = error(SubError::NameError, Category::Line, 0, 1);
        let (r, w) = fine_reward(&fb, Span::new(20, 25), 100, -0.3).unwrap();
        assert_eq!(r, -0.3);
        assert_eq!(w.unwrap().value(), 20.0);

        let fb = error(SubError::IndentationError, Category::Ignore, 0, 1);
        assert_eq!(fine_reward(&fb, Span::EMPTY, 40, -0.3).unwrap(), (0.0, None));

        let fb = error(SubError::TimeoutError, Category::Whole, 0, 1);
        let (r, w) = fine_reward(&fb, Span::new(0, 40), 40, -0.3).unwrap();
        assert_eq!((r, w.unwrap().value()), (-0.3, 1.0));

        assert_eq!(fine_reward(&Feedback::pass(1), Span::EMPTY, 4, -0.3).unwrap(), (0.0, None));
        let fb = error(SubError::NameError, Category::Line, 0, 1);
        assert_eq!(
            fine_reward(&fb, Span::EMPTY, 4, -0.3),
            Err(RewardError::EmptySpanWithPenalty)
        );
        assert_eq!(fine_reward(&fb, Span::new(0, 1), 4, 0.1), Err(RewardError::InvalidPenalty(0.1)));
    }

    #[test]
    fn adaptive_examples() {
        assert_eq!(adaptive_reward(&Feedback::failure(0, 5)).unwrap(), -0.3);
        assert_eq!(adaptive_reward(&Feedback::pass(5)).unwrap(), 1.0);
        approx::assert_abs_diff_eq!(adaptive_reward(&Feedback::failure(1, 1)).unwrap(), 0.35, epsilon = 1e-15);
        assert_eq!(adaptive_reward(&Feedback::failure(0, 0)), Err(RewardError::ZeroTests));
    }

    #[test]
    fn bundle_examples() {
        let c = CandidateProgram::from_source("a b c d e"); // 9 tokens
        let b = bundle(&Feedback::pass(3), &c, &RewardConfig::default()).unwrap();
        assert_eq!((b.r_coarse, b.r_adaptive, b.r_fine, b.fine_weight), (1.0, 1.0, 0.0, 0.0));
        assert_eq!(b.span_coarse, Span::new(0, 9));

        let src = "x\n".repeat(20); // 40 tokens
        let c = CandidateProgram::from_source(src);
        assert_eq!(c.len(), 40);
        let fb = Feedback::error(SubError::TimeoutError, Category::Whole, None, 2, 2);
        let b = bundle(&fb, &c, &RewardConfig::default()).unwrap();
        assert_eq!((b.r_coarse, b.r_fine, b.fine_weight), (-0.6, -0.3, 1.0));
        assert_eq!(b.span_fine, Span::new(0, 40));
        approx::assert_abs_diff_eq!(b.r_adaptive, 0.35, epsilon = 1e-15);

        let c = CandidateProgram::from_source("a b c d");
        assert_eq!(c.len(), 7);
        let b = bundle(&Feedback::failure(3, 1), &c, &RewardConfig::default()).unwrap();
        assert_eq!((b.r_coarse, b.r_fine, b.fine_weight), (-0.3, 0.0, 0.0));
        approx::assert_abs_diff_eq!(b.r_adaptive, 0.675, epsilon = 1e-15);
    }

    #[test]
    fn non_error_scope_switches_off_adaptive_for_errors() {
        let c = CandidateProgram::from_source("x");
        let cfg = RewardConfig {
            adaptive_scope: AdaptiveScope::NonError,
            ..RewardConfig::default()
        };
        let fb = Feedback::error(SubError::TimeoutError, Category::Whole, None, 0, 1);
        assert!(!bundle(&fb, &c, &cfg).unwrap().adaptive_active);
        assert!(bundle(&Feedback::failure(0, 1), &c, &cfg).unwrap().adaptive_active);
    }

    fn rewards(r_adaptive: f64) -> RewardBundle {
        RewardBundle {
            r_coarse: -0.3,
            r_fine: 0.0,
            r_adaptive,
            span_coarse: Span::new(0, 1),
            span_fine: Span::EMPTY,
            span_adaptive: Span::new(0, 1),
            fine_weight: 0.0,
            adaptive_active: true,
        }
    }

    #[test]
    fn baseline_examples() {
        let reg = BaselineRegister::new();
        let u = reg.update("p", "c1", &rewards(0.35));
        assert!(u.updated);
        assert_eq!(u.prev, BaselineRewards::default());

        let u = reg.update("p", "c2", &rewards(0.675));
        assert!(u.updated);
        assert_eq!(u.prev.r_adaptive, 0.35);

        let u = reg.update("p", "c3", &rewards(0.675));
        assert!(!u.updated, "ties keep the incumbent");
        assert_eq!(reg.entry("p").unwrap().best_candidate_id, "c2");

        let reg = BaselineRegister::new();
        reg.update("p", "c1", &RewardBundle { r_coarse: 1.0, ..rewards(1.0) });
        let u = reg.update("p", "c2", &rewards(0.35));
        assert!(!u.updated);
        assert_eq!(u.prev, BaselineRewards { r_coarse: 1.0, r_adaptive: 1.0 });
    }

    #[test]
    fn baseline_json_round_trip() {
        let reg = BaselineRegister::new();
        reg.update("a", "c1", &rewards(0.1));
        reg.update("b", "c2", &rewards(0.2));
        let back = BaselineRegister::from_json(&reg.to_json().unwrap()).unwrap();
        assert_eq!(back.snapshot(), reg.snapshot());
        let u = back.update("a", "c3", &rewards(0.9));
        assert!(u.updated);
        assert_eq!(back.entry("a").unwrap().updated_seq, 3);
    }

    #[test]
    fn concurrent_updates_keep_the_maximum() {
        let reg = BaselineRegister::new();
        std::thread::scope(|s| {
            for t in 0..8 {
                let reg = &reg;
                s.spawn(move || {
                    for i in 0..200 {
                        let r = -0.3 + 1.3 * ((i * 8 + t) % 1000) as f64 / 1000.0;
                        reg.update("p", &format!("{t}-{i}"), &rewards(r));
                    }
                });
            }
        });
        let best = reg.get("p").r_adaptive;
        approx::assert_abs_diff_eq!(best, -0.3 + 1.3 * 0.999, epsilon = 1e-12);
    }
}
