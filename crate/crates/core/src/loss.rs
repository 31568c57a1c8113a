//! Supervised and policy-gradient losses over per-token log-probabilities.
//!
//! Every RL loss here has the form `sum_t w_t * (-logprob_t)` with constant
//! coefficients `w_t`, so its gradient with respect to the policy is the
//! coefficient-weighted score function. The coefficients are returned
//! alongside the loss value for that reason.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::FineWeight;
use crate::types::{BaselineRewards, BufferEntry, LossBreakdown, Span};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("candidate has no logprobs")]
    MissingLogprobs,
    #[error("span {span} outside [0, {len}]")]
    SpanOutOfRange { span: Span, len: usize },
    #[error("{tokens} tokens but {logprobs} logprobs")]
    LengthMismatch { tokens: usize, logprobs: usize },
}

/// Which RL terms contribute to the total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossTerms {
    pub coarse: bool,
    pub fine: bool,
    pub adaptive: bool,
}

impl LossTerms {
    pub const ALL: LossTerms = LossTerms {
        coarse: true,
        fine: true,
        adaptive: true,
    };
    pub const COARSE: LossTerms = LossTerms {
        coarse: true,
        fine: false,
        adaptive: false,
    };
}

impl Default for LossTerms {
    fn default() -> Self {
        LossTerms::ALL
    }
}

/// Cross-entropy of a reference sequence: `-sum_t logprob_t`.
pub fn sl_loss(logprobs: Option<&[f64]>) -> Result<f64, LossError> {
    let lp = logprobs.ok_or(LossError::MissingLogprobs)?;
    Ok(-lp.iter().sum::<f64>())
}

/// `-weight * (reward - baseline) * sum_{t in span} logprob_t`, with the
/// per-token coefficients of `-logprob_t`.
pub fn rl_loss(
    logprobs: &[f64],
    reward: f64,
    baseline_reward: f64,
    span: Span,
    weight: f64,
) -> Result<(f64, Vec<f64>), LossError> {
    if span.start > span.end || span.end > logprobs.len() {
        return Err(LossError::SpanOutOfRange {
            span,
            len: logprobs.len(),
        });
    }
    let coeff = weight * (reward - baseline_reward);
    let mut weights = vec![0.0; logprobs.len()];
    if span.is_empty() || coeff == 0.0 {
        return Ok((0.0, weights));
    }
    let sum: f64 = logprobs[span.start..span.end].iter().sum();
    weights[span.start..span.end].fill(coeff);
    Ok((-coeff * sum, weights))
}

/// All four losses for one buffer entry.
pub fn total_loss(
    entry: &BufferEntry,
    baseline: &BaselineRewards,
    ground_truth_logprobs: Option<&[f64]>,
) -> Result<LossBreakdown, LossError> {
    total_loss_with(entry, baseline, ground_truth_logprobs, LossTerms::ALL)
}

/// As [`total_loss`], restricted to the selected RL terms.
pub fn total_loss_with(
    entry: &BufferEntry,
    baseline: &BaselineRewards,
    ground_truth_logprobs: Option<&[f64]>,
    terms: LossTerms,
) -> Result<LossBreakdown, LossError> {
    let lp = entry
        .candidate
        .logprobs
        .as_deref()
        .ok_or(LossError::MissingLogprobs)?;
    let t = entry.candidate.len();
    if lp.len() != t {
        return Err(LossError::LengthMismatch {
            tokens: t,
            logprobs: lp.len(),
        });
    }
    let r = &entry.rewards;
    let zero = || (0.0, vec![0.0; t]);

    let (l_coarse, w_coarse) = if terms.coarse {
        rl_loss(lp, r.r_coarse, baseline.r_coarse, r.span_coarse, 1.0)?
    } else {
        zero()
    };
    // No baseline for the fine term.
    let (l_fine, w_fine) = match FineWeight::new(t, r.span_fine) {
        Some(alpha) if terms.fine && r.r_fine != 0.0 => {
            rl_loss(lp, r.r_fine, 0.0, r.span_fine, alpha.value())?
        }
        _ => zero(),
    };
    let (l_adaptive, w_adaptive) = if terms.adaptive && r.adaptive_active {
        rl_loss(lp, r.r_adaptive, baseline.r_adaptive, r.span_adaptive, 1.0)?
    } else {
        zero()
    };
    let l_sl = match ground_truth_logprobs {
        Some(gt) => sl_loss(Some(gt))?,
        None => 0.0,
    };
    let per_token_weights = (0..t)
        .map(|i| w_coarse[i] + w_fine[i] + w_adaptive[i])
        .collect();
    Ok(LossBreakdown {
        l_sl,
        l_coarse,
        l_fine,
        l_adaptive,
        l_total: l_sl + l_coarse + l_fine + l_adaptive,
        per_token_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{CandidateProgram, Category, Feedback, RewardBundle, SubError};
    use proptest::prelude::*;

    #[test]
    fn sl_examples() {
        assert_eq!(sl_loss(Some(&[0.0, 0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(sl_loss(Some(&[-0.5, -0.5])).unwrap(), 1.0);
        assert_eq!(sl_loss(Some(&[])).unwrap(), 0.0);
        assert_eq!(sl_loss(None), Err(LossError::MissingLogprobs));
    }

    #[test]
    fn rl_examples() {
        let (l, w) = rl_loss(&[-1.0, -2.0], 0.5, 0.5, Span::new(0, 2), 1.0).unwrap();
        assert_eq!(l, 0.0);
        assert!(w.iter().all(|&x| x == 0.0));

        let (l, w) = rl_loss(&[-1.0, -1.0, -7.0], 1.0, 0.0, Span::new(0, 2), 1.0).unwrap();
        assert_eq!(l, 2.0);
        assert_eq!(w, vec![1.0, 1.0, 0.0]);

        let (l, _) = rl_loss(&[-1.0], 1.0, 0.0, Span::EMPTY, 1.0).unwrap();
        assert_eq!(l, 0.0);

        assert!(matches!(
            rl_loss(&[-1.0], 1.0, 0.0, Span::new(0, 2), 1.0),
            Err(LossError::SpanOutOfRange { .. })
        ));
    }

    fn entry(category: Category, span_fine: Span, fine_weight: f64, r_fine: f64) -> BufferEntry {
        let candidate = CandidateProgram::from_source("a b").with_logprobs(vec![-1.0; 3]);
        // Four tokens are needed; pad the source.
        let candidate = CandidateProgram {
            tokens: vec!["a".into(), " ".into(), "b".into(), "\n".into()],
            token_char_spans: vec![Span::new(0, 1), Span::new(1, 2), Span::new(2, 3), Span::new(3, 4)],
            source: "a b\n".into(),
            logprobs: Some(vec![-1.0; 4]),
            ..candidate
        };
        BufferEntry {
            problem_id: "p".into(),
            candidate,
            feedback: Feedback::error(SubError::NameError, category, Some(1), 0, 1),
            rewards: RewardBundle {
                r_coarse: -0.6,
                r_fine,
                r_adaptive: -0.3,
                span_coarse: Span::new(0, 4),
                span_fine,
                span_adaptive: Span::new(0, 4),
                fine_weight,
                adaptive_active: true,
            },
            baseline: BaselineRewards::default(),
            created_seq: 1,
        }
    }

    #[test]
    fn line_error_hand_evaluation() {
        let e = entry(Category::Line, Span::new(2, 4), 2.0, -0.3);
        let b = total_loss(&e, &BaselineRewards::default(), None).unwrap();
        approx::assert_abs_diff_eq!(b.l_coarse, -2.4, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(b.l_fine, -1.2, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(b.l_adaptive, -1.2, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(b.l_total, -4.8, epsilon = 1e-12);
        assert_eq!(b.l_sl, 0.0);
        // coarse -0.6 + adaptive -0.3 everywhere, fine 2 * -0.3 on [2, 4)
        let expected = [-0.9, -0.9, -1.5, -1.5];
        for (w, e) in b.per_token_weights.iter().zip(expected) {
            approx::assert_abs_diff_eq!(*w, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn ignore_category_drops_fine_term() {
        let line = total_loss(
            &entry(Category::Line, Span::new(2, 4), 2.0, -0.3),
            &BaselineRewards::default(),
            None,
        )
        .unwrap();
        let ignore = total_loss(
            &entry(Category::Ignore, Span::EMPTY, 0.0, 0.0),
            &BaselineRewards::default(),
            None,
        )
        .unwrap();
        assert_eq!(ignore.l_fine, 0.0);
        assert_eq!(ignore.l_coarse, line.l_coarse);
        assert_eq!(ignore.l_adaptive, line.l_adaptive);
    }

    #[test]
    fn zero_advantage_pass_sample() {
        let mut e = entry(Category::Line, Span::EMPTY, 0.0, 0.0);
        e.feedback = Feedback::pass(1);
        e.rewards.r_coarse = 1.0;
        e.rewards.r_adaptive = 1.0;
        let b = total_loss(&e, &BaselineRewards { r_coarse: 1.0, r_adaptive: 1.0 }, None).unwrap();
        assert_eq!(b.l_total, 0.0);
        assert!(b.per_token_weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn missing_logprobs() {
        let mut e = entry(Category::Line, Span::EMPTY, 0.0, 0.0);
        e.candidate.logprobs = None;
        assert_eq!(
            total_loss(&e, &BaselineRewards::default(), None),
            Err(LossError::MissingLogprobs)
        );
    }

    fn lp_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0f64..0.0, 1..24)
    }

    proptest! {
        #[test]
        fn total_is_sum_and_weights_are_linear(
            lp in lp_vec(),
            r_coarse in prop::sample::select(vec![1.0, -0.3, -0.6, -1.0]),
            r_adaptive in -0.3f64..1.0,
            b_coarse in -1.0f64..1.0,
            b_adaptive in -0.3f64..1.0,
            a in 0usize..24, b in 0usize..24,
            gt in prop::option::of(lp_vec()),
        ) {
            let t = lp.len();
            let (s, e) = (a.min(b) % (t + 1), a.max(b) % (t + 1));
            let (s, e) = (s.min(e), s.max(e));
            let span = Span::new(s, e);
            let alpha = FineWeight::new(t, span);
            let mut entry = entry(Category::Line, span, alpha.map_or(0.0, |w| w.value()), if span.is_empty() { 0.0 } else { -0.3 });
            entry.candidate = CandidateProgram {
                source: "x".repeat(t),
                tokens: vec!["x".into(); t],
                token_char_spans: (0..t).map(|i| Span::new(i, i + 1)).collect(),
                logprobs: Some(lp.clone()),
                truncated: false,
            };
            entry.rewards.r_coarse = r_coarse;
            entry.rewards.r_adaptive = r_adaptive;
            entry.rewards.span_coarse = Span::new(0, t);
            entry.rewards.span_adaptive = Span::new(0, t);
            let base = BaselineRewards { r_coarse: b_coarse, r_adaptive: b_adaptive };
            let out = total_loss(&entry, &base, gt.as_deref()).unwrap();
            prop_assert_eq!(out.l_total, out.l_sl + out.l_coarse + out.l_fine + out.l_adaptive);

            let (_, wc) = rl_loss(&lp, r_coarse, b_coarse, Span::new(0, t), 1.0).unwrap();
            let (_, wa) = rl_loss(&lp, r_adaptive, b_adaptive, Span::new(0, t), 1.0).unwrap();
            let (_, wf) = match alpha {
                Some(w) => rl_loss(&lp, -0.3, 0.0, span, w.value()).unwrap(),
                None => (0.0, vec![0.0; t]),
            };
            for i in 0..t {
                prop_assert_eq!(out.per_token_weights[i], wc[i] + wf[i] + wa[i]);
                if !span.contains(i) {
                    prop_assert_eq!(wf[i], 0.0);
                }
            }
            // Loss equals the weighted negative log-likelihood.
            let rl: f64 = out.per_token_weights.iter().zip(&lp).map(|(w, l)| -w * l).sum();
            prop_assert!((rl - (out.l_coarse + out.l_fine + out.l_adaptive)).abs() < 1e-9);
        }

        #[test]
        fn fine_over_whole_sequence_equals_unit_weight_loss(lp in lp_vec(), r_fine in -1.0f64..0.0) {
            let t = lp.len();
            let alpha = FineWeight::new(t, Span::new(0, t)).unwrap();
            prop_assert_eq!(alpha.value(), 1.0);
            let (fine, _) = rl_loss(&lp, r_fine, 0.0, Span::new(0, t), alpha.value()).unwrap();
            let (plain, _) = rl_loss(&lp, r_fine, 0.0, Span::new(0, t), 1.0).unwrap();
            prop_assert_eq!(fine, plain);
        }

        #[test]
        fn advantage_sign_sets_weight_sign(
            lp in lp_vec(), reward in -1.0f64..1.0, baseline in -1.0f64..1.0,
        ) {
            let t = lp.len();
            let (_, w) = rl_loss(&lp, reward, baseline, Span::new(0, t), 1.0).unwrap();
            let adv = reward - baseline;
            for x in w {
                prop_assert!(x == 0.0 || x.signum() == adv.signum());
            }
        }
    }
}
