//! Tabular softmax n-gram policy.
//!
//! Each context (problem id plus the previous `k` tokens) owns a row of
//! logits over the vocabulary; rows that were never updated are all zero.
//! Every loss the trainer sees has the form `sum_t w_t * (-log p(a_t | c_t))`
//! with constant `w_t`, whose gradient with respect to row `c_t` is
//! `w_t * (softmax(row) - onehot(a_t))`.

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::vocab::{self, TokenId, EOS};
use crate::types::{CandidateProgram, LossBreakdown, Problem};

pub const DEFAULT_CONTEXT_LEN: usize = 3;
pub const MAX_CONTEXT_LEN: usize = 8;
/// Temperatures below this decode greedily.
pub const GREEDY_BELOW: f64 = 1e-3;

const PAD: TokenId = TokenId::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("learning rate must be positive, got {0}")]
    InvalidLearningRate(f64),
    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),
    #[error("{tokens} tokens but {weights} weights")]
    LengthMismatch { tokens: usize, weights: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Context {
    problem: u64,
    prev: [TokenId; MAX_CONTEXT_LEN],
}

/// A token sequence with the coefficient of each `-logprob_t`.
#[derive(Debug, Clone, Copy)]
pub struct WeightedSequence<'a> {
    pub problem_id: &'a str,
    pub ids: &'a [TokenId],
    pub weights: &'a [f64],
}

/// Sparse gradient: only rows touched by some sequence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradient {
    pub rows: HashMap<Context, Vec<f64>>,
}

impl Gradient {
    pub fn is_finite(&self) -> bool {
        self.rows.values().flatten().all(|g| g.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.rows.values().flatten().fold(0.0, |m, g| m.max(g.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    context_len: usize,
    rows: HashMap<Context, Vec<f64>>,
}

fn problem_key(problem_id: &str) -> u64 {
    let mut h = DefaultHasher::new();
    problem_id.hash(&mut h);
    h.finish()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|x| x / temperature).collect();
    let lse = log_sum_exp(&scaled);
    scaled.iter().map(|x| (x - lse).exp()).collect()
}

impl Default for ToyPolicy {
    fn default() -> Self {
        ToyPolicy::new(DEFAULT_CONTEXT_LEN)
    }
}

impl ToyPolicy {
    /// # Panics
    /// When `context_len` is 0 or above [`MAX_CONTEXT_LEN`].
    pub fn new(context_len: usize) -> Self {
        assert!(
            (1..=MAX_CONTEXT_LEN).contains(&context_len),
            "context length must be in 1..={MAX_CONTEXT_LEN}"
        );
        ToyPolicy {
            context_len,
            rows: HashMap::new(),
        }
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    /// Number of rows that differ from the all-zero default.
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn context(&self, problem_id: &str, prefix: &[TokenId]) -> Context {
        self.context_keyed(problem_key(problem_id), prefix)
    }

    fn context_keyed(&self, problem: u64, prefix: &[TokenId]) -> Context {
        let mut prev = [PAD; MAX_CONTEXT_LEN];
        let take = prefix.len().min(self.context_len);
        let tail = &prefix[prefix.len() - take..];
        prev[self.context_len - take..self.context_len].copy_from_slice(tail);
        Context { problem, prev }
    }

    /// The context each token of `ids` was chosen in.
    pub fn contexts(&self, problem_id: &str, ids: &[TokenId]) -> Vec<Context> {
        let key = problem_key(problem_id);
        (0..ids.len()).map(|t| self.context_keyed(key, &ids[..t])).collect()
    }

    pub fn logits(&self, ctx: &Context) -> Vec<f64> {
        self.rows
            .get(ctx)
            .cloned()
            .unwrap_or_else(|| vec![0.0; vocab::size()])
    }

    pub fn param(&self, ctx: &Context, token: TokenId) -> f64 {
        self.rows.get(ctx).map_or(0.0, |r| r[token as usize])
    }

    pub fn set_param(&mut self, ctx: Context, token: TokenId, value: f64) {
        let row = self.rows.entry(ctx).or_insert_with(|| vec![0.0; vocab::size()]);
        row[token as usize] = value;
    }

    /// Next-token distribution at `temperature`.
    pub fn probs(&self, ctx: &Context, temperature: f64) -> Vec<f64> {
        softmax(&self.logits(ctx), temperature)
    }

    /// Log-probabilities (temperature 1) of each token of `ids`.
    pub fn sequence_logprobs(&self, problem_id: &str, ids: &[TokenId]) -> Vec<f64> {
        self.contexts(problem_id, ids)
            .iter()
            .zip(ids)
            .map(|(ctx, &a)| {
                let logits = self.logits(ctx);
                logits[a as usize] - log_sum_exp(&logits)
            })
            .collect()
    }

    /// Samples a program token by token. Log-probabilities are recorded at
    /// temperature 1 whatever the sampling temperature. The program is
    /// marked truncated when `max_tokens` is reached before the end token.
    pub fn generate(&self, problem: &Problem, max_tokens: usize, temperature: f64, seed: u64) -> CandidateProgram {
        let (ids, logprobs, truncated) = self.generate_ids(&problem.id, max_tokens, temperature, seed);
        vocab::candidate(&ids, logprobs, truncated)
    }

    pub fn generate_ids(
        &self,
        problem_id: &str,
        max_tokens: usize,
        temperature: f64,
        seed: u64,
    ) -> (Vec<TokenId>, Vec<f64>, bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let key = problem_key(problem_id);
        let mut ids = Vec::new();
        let mut logprobs = Vec::new();
        while ids.len() < max_tokens {
            let ctx = self.context_keyed(key, &ids);
            let logits = self.logits(&ctx);
            let lse = log_sum_exp(&logits);
            let next = if temperature < GREEDY_BELOW {
                let mut best = 0;
                for (i, &x) in logits.iter().enumerate() {
                    if x > logits[best] {
                        best = i;
                    }
                }
                best
            } else {
                let p = softmax(&logits, temperature);
                match WeightedIndex::new(&p) {
                    Ok(dist) => dist.sample(&mut rng),
                    // Only reachable with degenerate logits; fall back to the mode.
                    Err(_) => p
                        .iter()
                        .enumerate()
                        .fold(0, |b, (i, &x)| if x > p[b] { i } else { b }),
                }
            };
            ids.push(next as TokenId);
            logprobs.push((logits[next] - lse).min(0.0));
            if next as TokenId == EOS {
                return (ids, logprobs, false);
            }
        }
        (ids, logprobs, true)
    }

    /// Gradient of `sum over sequences of sum_t w_t * (-log p(a_t | c_t))`.
    pub fn gradient(&self, sequences: &[WeightedSequence<'_>]) -> Result<Gradient, PolicyError> {
        let mut grad = Gradient::default();
        for seq in sequences {
            if seq.ids.len() != seq.weights.len() {
                return Err(PolicyError::LengthMismatch {
                    tokens: seq.ids.len(),
                    weights: seq.weights.len(),
                });
            }
            let ctxs = self.contexts(seq.problem_id, seq.ids);
            for ((ctx, &a), &w) in ctxs.iter().zip(seq.ids).zip(seq.weights) {
                if w == 0.0 {
                    continue;
                }
                let p = self.probs(ctx, 1.0);
                let row = grad.rows.entry(*ctx).or_insert_with(|| vec![0.0; vocab::size()]);
                for (g, pi) in row.iter_mut().zip(&p) {
                    *g += w * pi;
                }
                row[a as usize] -= w;
            }
        }
        if !grad.is_finite() {
            return Err(PolicyError::NonFiniteGradient);
        }
        Ok(grad)
    }

    /// `params -= lr * grad`.
    pub fn apply(&mut self, grad: &Gradient, lr: f64) -> Result<(), PolicyError> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(PolicyError::InvalidLearningRate(lr));
        }
        if !grad.is_finite() {
            return Err(PolicyError::NonFiniteGradient);
        }
        for (ctx, g) in &grad.rows {
            if g.iter().all(|x| *x == 0.0) {
                continue;
            }
            let row = self.rows.entry(*ctx).or_insert_with(|| vec![0.0; vocab::size()]);
            for (p, gi) in row.iter_mut().zip(g) {
                *p -= lr * gi;
            }
        }
        Ok(())
    }
}

/// One element of a training batch.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub problem_id: String,
    pub ids: Vec<TokenId>,
    pub breakdown: LossBreakdown,
    /// Reference program for the supervised term.
    pub ground_truth: Option<Vec<TokenId>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepStats {
    pub l_sl: f64,
    pub l_coarse: f64,
    pub l_fine: f64,
    pub l_adaptive: f64,
    /// Mean objective: `sl_weight * l_sl + l_coarse + l_fine + l_adaptive`.
    pub l_total: f64,
    pub grad_max_abs: f64,
}

/// One plain gradient-descent step on the batch-mean objective
/// `sl_weight * L_sl + L_coarse + L_fine + L_adaptive`.
pub fn train_step(
    policy: &mut ToyPolicy,
    batch: &[TrainSample],
    lr: f64,
    sl_weight: f64,
) -> Result<StepStats, PolicyError> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(PolicyError::InvalidLearningRate(lr));
    }
    let mut stats = StepStats::default();
    if batch.is_empty() {
        return Ok(stats);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut owned: Vec<(String, Vec<TokenId>, Vec<f64>)> = Vec::new();
    for s in batch {
        let b = &s.breakdown;
        stats.l_sl += scale * b.l_sl;
        stats.l_coarse += scale * b.l_coarse;
        stats.l_fine += scale * b.l_fine;
        stats.l_adaptive += scale * b.l_adaptive;
        stats.l_total += scale * (sl_weight * b.l_sl + b.l_coarse + b.l_fine + b.l_adaptive);
        owned.push((
            s.problem_id.clone(),
            s.ids.clone(),
            b.per_token_weights.iter().map(|w| w * scale).collect(),
        ));
        if let Some(gt) = &s.ground_truth {
            if sl_weight != 0.0 {
                owned.push((s.problem_id.clone(), gt.clone(), vec![sl_weight * scale; gt.len()]));
            }
        }
    }
    let seqs: Vec<WeightedSequence<'_>> = owned
        .iter()
        .map(|(p, ids, w)| WeightedSequence {
            problem_id: p,
            ids,
            weights: w,
        })
        .collect();
    let grad = policy.gradient(&seqs)?;
    stats.grad_max_abs = grad.max_abs();
    policy.apply(&grad, lr)?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::suite;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn problem() -> Problem {
        suite::problems().remove(0)
    }

    #[test]
    fn softmax_rows_are_normalized() {
        let mut pol = ToyPolicy::default();
        let ctx = pol.context("p", &[1, 2]);
        pol.set_param(ctx, 5, 40.0);
        pol.set_param(ctx, 6, -30.0);
        for t in [0.2, 1.0, 3.0] {
            assert_abs_diff_eq!(pol.probs(&ctx, t).iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn context_uses_last_k_tokens() {
        let pol = ToyPolicy::new(2);
        assert_eq!(pol.context("p", &[1, 2, 3]), pol.context("p", &[9, 2, 3]));
        assert_ne!(pol.context("p", &[1, 2, 3]), pol.context("q", &[1, 2, 3]));
        assert_ne!(pol.context("p", &[3]), pol.context("p", &[2, 3]));
    }

    #[test]
    fn generation_is_deterministic() {
        let pol = ToyPolicy::default();
        let p = problem();
        assert_eq!(pol.generate(&p, 16, 1.0, 7), pol.generate(&p, 16, 1.0, 7));
        let greedy: Vec<_> = (0..3).map(|s| pol.generate(&p, 16, 0.0, s)).collect();
        assert_eq!(greedy[0], greedy[1]);
        assert_eq!(greedy[1], greedy[2]);
        // All-zero logits: argmax ties resolve to the lowest id, the end token.
        assert_eq!(greedy[0].tokens, vec![""]);
    }

    #[test]
    fn truncation_flag() {
        let mut pol = ToyPolicy::default();
        let p = problem();
        for prev in 0..vocab::size() as TokenId {
            for ctx in [pol.context(&p.id, &[]), pol.context(&p.id, &[prev]), pol.context(&p.id, &[prev, prev]), pol.context(&p.id, &[prev, prev, prev])] {
                pol.set_param(ctx, 1, 50.0);
            }
        }
        let c = pol.generate(&p, 5, 1.0, 0);
        assert!(c.truncated);
        assert_eq!(c.len(), 5);
        assert!(crate::types::validate_candidate(&c).is_empty());
    }

    #[test]
    fn higher_temperature_gives_more_distinct_programs() {
        let mut pol = ToyPolicy::default();
        let p = problem();
        let gt = vocab::encode(p.ground_truth.as_deref().unwrap()).unwrap();
        let w = vec![1.0; gt.len()];
        for _ in 0..30 {
            let g = pol
                .gradient(&[WeightedSequence { problem_id: &p.id, ids: &gt, weights: &w }])
                .unwrap();
            pol.apply(&g, 0.5).unwrap();
        }
        let distinct = |t: f64| {
            (0..1000)
                .map(|s| pol.generate(&p, 16, t, s).source)
                .collect::<std::collections::HashSet<_>>()
                .len()
        };
        assert!(distinct(1.0) > distinct(0.2));
    }

    #[test]
    fn zero_advantage_batch_leaves_params_unchanged() {
        let mut pol = ToyPolicy::default();
        let ctx = pol.context("echo", &[]);
        pol.set_param(ctx, 4, 1.5);
        let before = pol.clone();
        let ids = vec![4, 5, 23, 0];
        let sample = TrainSample {
            problem_id: "echo".into(),
            ids: ids.clone(),
            breakdown: LossBreakdown {
                per_token_weights: vec![0.0; 4],
                ..LossBreakdown::default()
            },
            ground_truth: None,
        };
        train_step(&mut pol, &[sample], 0.1, 1.0).unwrap();
        assert_eq!(pol, before);
    }

    #[test]
    fn positive_advantage_raises_sequence_logprob() {
        let mut pol = ToyPolicy::default();
        let p = problem();
        let c = pol.generate(&p, 12, 1.0, 3);
        let ids = vocab::ids_of(&c).unwrap();
        let before: f64 = pol.sequence_logprobs(&p.id, &ids).iter().sum();
        let sample = TrainSample {
            problem_id: p.id.clone(),
            ids: ids.clone(),
            breakdown: LossBreakdown {
                per_token_weights: vec![1.0; ids.len()],
                ..LossBreakdown::default()
            },
            ground_truth: None,
        };
        train_step(&mut pol, &[sample], 0.1, 0.0).unwrap();
        let after: f64 = pol.sequence_logprobs(&p.id, &ids).iter().sum();
        assert!(after > before);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let mut pol = ToyPolicy::default();
        assert_eq!(train_step(&mut pol, &[], -1.0, 1.0), Err(PolicyError::InvalidLearningRate(-1.0)));
        let seq = WeightedSequence { problem_id: "p", ids: &[1, 2], weights: &[1.0] };
        assert!(matches!(pol.gradient(&[seq]), Err(PolicyError::LengthMismatch { .. })));
        let seq = WeightedSequence { problem_id: "p", ids: &[1], weights: &[f64::NAN] };
        assert_eq!(pol.gradient(&[seq]), Err(PolicyError::NonFiniteGradient));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn logprobs_match_recorded_values(seed in any::<u64>(), temp in 0.1f64..3.0) {
            let mut pol = ToyPolicy::default();
            let p = problem();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..20 {
                use rand::Rng;
                let prefix: Vec<TokenId> = (0..rng.random_range(0..4)).map(|_| rng.random_range(0..vocab::size() as TokenId)).collect();
                let ctx = pol.context(&p.id, &prefix);
                pol.set_param(ctx, rng.random_range(0..vocab::size() as TokenId), rng.random_range(-3.0..3.0));
            }
            let c = pol.generate(&p, 10, temp, seed);
            let ids = vocab::ids_of(&c).unwrap();
            let lp = pol.sequence_logprobs(&p.id, &ids);
            let recorded = c.logprobs.unwrap();
            for (a, b) in lp.iter().zip(&recorded) {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!(*b <= 0.0);
            }
        }
    }
}
