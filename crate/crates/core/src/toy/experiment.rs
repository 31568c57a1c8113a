//! End-to-end training runs on the toy suite:
//! generate, execute, classify, reward, loss, update.
//!
//! Rounds run in lockstep. Each online round samples fresh programs from the
//! current parameters, grades them, pushes them through the buffer and the
//! baseline register, then takes one gradient step on a batch drawn from the
//! buffer. Offline runs grade one fixed sample set drawn before training and
//! take every batch from it.

use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::policy::{train_step, PolicyError, StepStats, ToyPolicy, TrainSample, DEFAULT_CONTEXT_LEN};
use super::runtime::ToyRuntime;
use super::vocab::{self, TokenId};
use crate::buffer::{BufferError, OnlineBuffer};
use crate::classify::{self, ClassifyError};
use crate::loss::{self, LossError, LossTerms};
use crate::reward::{self, BaselineRegister, RewardConfig, RewardError};
use crate::sandbox::{Limits, SandboxError, TestRunner};
use crate::types::{BufferEntry, CandidateProgram, Feedback, Problem, SubError, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Online,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub feedback: LossTerms,
    /// Sampling temperature of training generations.
    pub temperature: f64,
    pub steps: usize,
    pub seed: u64,
    pub lr: f64,
    pub sl_weight: f64,
    pub batch_size: usize,
    /// Fresh programs per problem per online round.
    pub samples_per_problem: usize,
    /// Size per problem of the fixed offline set.
    pub offline_samples_per_problem: usize,
    /// Supervised steps on the ground truths before step 0.
    pub warm_start_steps: usize,
    pub warm_start_lr: f64,
    pub context_len: usize,
    pub buffer_capacity: usize,
    pub eval_samples_per_problem: usize,
    pub eval_temperature: f64,
    /// Evaluate every this many steps; 0 evaluates only at the start and end.
    pub eval_every: usize,
    pub reward: RewardConfig,
    pub step_budget: u64,
    /// Worker threads for generation and grading; 0 uses the global pool.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Online,
            feedback: LossTerms::ALL,
            temperature: 1.0,
            steps: 2000,
            seed: 0,
            lr: 0.1,
            sl_weight: 1.0,
            batch_size: 32,
            samples_per_problem: 2,
            offline_samples_per_problem: 32,
            warm_start_steps: 10,
            warm_start_lr: 0.1,
            context_len: DEFAULT_CONTEXT_LEN,
            buffer_capacity: 512,
            eval_samples_per_problem: 32,
            eval_temperature: 1.0,
            eval_every: 0,
            reward: RewardConfig::default(),
            step_budget: 20_000,
            workers: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("problem {0}: ground truth is missing or outside the toy vocabulary")]
    UnencodableGroundTruth(String),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("metrics output: {0}")]
    Io(#[from] std::io::Error),
}

/// Outcome shares over a set of graded generations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub n: usize,
    pub pass_rate: f64,
    /// Mean fraction of tests passed.
    pub test_pass_ratio: f64,
    pub verdicts: BTreeMap<Verdict, f64>,
    pub sub_errors: BTreeMap<SubError, f64>,
}

impl SampleStats {
    pub fn from_feedback(feedbacks: &[Feedback]) -> Result<Self, ClassifyError> {
        let dist = classify::error_distribution(feedbacks)?;
        let ratio = feedbacks
            .iter()
            .map(|f| f.n_pass as f64 / (f.n_pass + f.n_fail).max(1) as f64)
            .sum::<f64>()
            / feedbacks.len() as f64;
        Ok(SampleStats {
            n: dist.total,
            pass_rate: dist.verdicts.get(&Verdict::Pass).copied().unwrap_or(0.0),
            test_pass_ratio: ratio,
            verdicts: dist.verdicts,
            sub_errors: dist.sub_errors,
        })
    }

    pub fn fraction(&self, verdict: Verdict) -> f64 {
        self.verdicts.get(&verdict).copied().unwrap_or(0.0)
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub step: usize,
    /// Programs generated for training this round (online only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated: Option<SampleStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<StepStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<SampleStats>,
    pub buffer_len: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub metrics: Vec<RoundMetrics>,
    pub initial_eval: SampleStats,
    pub final_eval: SampleStats,
    pub policy: ToyPolicy,
}

impl ExperimentResult {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for m in &self.metrics {
            serde_json::to_writer(&mut out, m)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Hash)]
enum Stream {
    Train,
    Offline,
    Eval,
    Batch,
}

fn derive_seed(seed: u64, stream: Stream, a: usize, b: usize, c: usize) -> u64 {
    let mut h = DefaultHasher::new();
    (seed, stream, a, b, c).hash(&mut h);
    h.finish()
}

impl ExperimentConfig {
    /// Settings used for the bundled-suite ablations. Every row of the
    /// tabular policy belongs to one problem, so the batch mean divides each
    /// row's gradient by roughly the batch size; the larger steps offset that.
    pub fn ablation_preset() -> Self {
        ExperimentConfig {
            steps: 300,
            lr: 3.0,
            sl_weight: 0.3,
            warm_start_steps: 60,
            warm_start_lr: 2.0,
            ..ExperimentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::InvalidConfig(m.to_string()));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if !(self.eval_temperature > 0.0 && self.eval_temperature.is_finite()) {
            return bad("eval_temperature must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.warm_start_steps > 0 && !(self.warm_start_lr > 0.0 && self.warm_start_lr.is_finite()) {
            return bad("warm_start_lr must be positive");
        }
        if !(self.sl_weight >= 0.0 && self.sl_weight.is_finite()) {
            return bad("sl_weight must be non-negative");
        }
        if self.reward.fine_penalty.is_nan() || self.reward.fine_penalty > 0.0 {
            return bad("fine penalty must be <= 0");
        }
        if self.batch_size == 0 || self.eval_samples_per_problem == 0 || self.buffer_capacity == 0 {
            return bad("batch_size, eval_samples_per_problem and buffer_capacity must be positive");
        }
        match self.mode {
            Mode::Online if self.samples_per_problem == 0 => bad("samples_per_problem must be positive"),
            Mode::Offline if self.offline_samples_per_problem == 0 => {
                bad("offline_samples_per_problem must be positive")
            }
            _ if !(1..=super::policy::MAX_CONTEXT_LEN).contains(&self.context_len) => {
                bad("context_len out of range")
            }
            _ => Ok(()),
        }
    }
}

struct Graded {
    problem: usize,
    candidate: CandidateProgram,
    feedback: Feedback,
}

struct Runner<'a> {
    config: &'a ExperimentConfig,
    problems: &'a [Problem],
    ground_truths: Vec<Vec<TokenId>>,
    runtime: ToyRuntime,
    limits: Limits,
}

impl Runner<'_> {
    /// Samples and grades `per_problem` programs for every problem.
    fn sample(
        &self,
        policy: &ToyPolicy,
        per_problem: usize,
        temperature: f64,
        seed_of: impl Fn(usize, usize) -> u64 + Sync,
    ) -> Result<Vec<Graded>, ExperimentError> {
        let jobs: Vec<(usize, usize)> = (0..self.problems.len())
            .flat_map(|p| (0..per_problem).map(move |s| (p, s)))
            .collect();
        jobs.par_iter()
            .map(|&(p, s)| {
                let problem = &self.problems[p];
                let candidate = policy.generate(problem, problem.max_tokens, temperature, seed_of(p, s));
                let outcomes = self.runtime.run(problem, &candidate, &self.limits)?;
                let feedback = classify::classify(problem, &candidate, &outcomes)?;
                Ok(Graded {
                    problem: p,
                    candidate,
                    feedback,
                })
            })
            .collect()
    }

    fn evaluate(&self, policy: &ToyPolicy, step: usize) -> Result<SampleStats, ExperimentError> {
        let c = self.config;
        let graded = self.sample(policy, c.eval_samples_per_problem, c.eval_temperature, |p, s| {
            derive_seed(c.seed, Stream::Eval, step, p, s)
        })?;
        let fbs: Vec<Feedback> = graded.into_iter().map(|g| g.feedback).collect();
        Ok(SampleStats::from_feedback(&fbs)?)
    }

    fn warm_start(&self, policy: &mut ToyPolicy) -> Result<(), ExperimentError> {
        let batch: Vec<TrainSample> = self
            .problems
            .iter()
            .zip(&self.ground_truths)
            .map(|(p, gt)| TrainSample {
                problem_id: p.id.clone(),
                ids: Vec::new(),
                breakdown: Default::default(),
                ground_truth: Some(gt.clone()),
            })
            .collect();
        for _ in 0..self.config.warm_start_steps {
            train_step(policy, &batch, self.config.warm_start_lr, 1.0)?;
        }
        Ok(())
    }

    /// Registers graded samples with the baseline and the buffer.
    fn store(
        &self,
        graded: Vec<Graded>,
        buffer: &OnlineBuffer,
        register: &BaselineRegister,
        round: usize,
    ) -> Result<(), ExperimentError> {
        for (i, g) in graded.into_iter().enumerate() {
            let problem = &self.problems[g.problem];
            let rewards = reward::bundle(&g.feedback, &g.candidate, &self.config.reward)?;
            let baseline = register.get(&problem.id);
            register.update(&problem.id, &format!("{round}-{i}"), &rewards);
            buffer.push(BufferEntry {
                problem_id: problem.id.clone(),
                candidate: g.candidate,
                feedback: g.feedback,
                rewards,
                baseline,
                created_seq: 0,
            })?;
        }
        Ok(())
    }

    /// Losses of `entry` under the current parameters and baseline.
    fn train_sample(
        &self,
        policy: &ToyPolicy,
        register: &BaselineRegister,
        mut entry: BufferEntry,
    ) -> Result<TrainSample, ExperimentError> {
        let p = self
            .problems
            .iter()
            .position(|p| p.id == entry.problem_id)
            .expect("buffer only holds suite problems");
        let ids = vocab::ids_of(&entry.candidate).expect("toy programs use vocabulary tokens");
        entry.candidate.logprobs = Some(policy.sequence_logprobs(&entry.problem_id, &ids));
        let gt = &self.ground_truths[p];
        let gt_lp = policy.sequence_logprobs(&entry.problem_id, gt);
        let breakdown = loss::total_loss_with(
            &entry,
            &register.get(&entry.problem_id),
            Some(&gt_lp),
            self.config.feedback,
        )?;
        Ok(TrainSample {
            problem_id: entry.problem_id,
            ids,
            breakdown,
            ground_truth: Some(gt.clone()),
        })
    }

    fn run(&self) -> Result<ExperimentResult, ExperimentError> {
        let c = self.config;
        let mut policy = ToyPolicy::new(c.context_len);
        self.warm_start(&mut policy)?;
        let initial_eval = self.evaluate(&policy, 0)?;
        let register = BaselineRegister::new();

        let capacity = match c.mode {
            Mode::Online => c.buffer_capacity,
            Mode::Offline => c.offline_samples_per_problem * self.problems.len(),
        };
        let buffer = OnlineBuffer::new(capacity)?;
        if c.mode == Mode::Offline {
            let fixed = self.sample(&policy, c.offline_samples_per_problem, c.temperature, |p, s| {
                derive_seed(c.seed, Stream::Offline, 0, p, s)
            })?;
            self.store(fixed, &buffer, &register, 0)?;
        }

        let mut metrics = vec![RoundMetrics {
            step: 0,
            generated: None,
            losses: None,
            eval: Some(initial_eval.clone()),
            buffer_len: buffer.len(),
        }];
        let mut final_eval = initial_eval.clone();
        for step in 1..=c.steps {
            let mut generated = None;
            if c.mode == Mode::Online {
                let fresh = self.sample(&policy, c.samples_per_problem, c.temperature, |p, s| {
                    derive_seed(c.seed, Stream::Train, step, p, s)
                })?;
                let fbs: Vec<Feedback> = fresh.iter().map(|g| g.feedback.clone()).collect();
                generated = Some(SampleStats::from_feedback(&fbs)?);
                self.store(fresh, &buffer, &register, step)?;
            }
            let batch = buffer.sample(c.batch_size, derive_seed(c.seed, Stream::Batch, step, 0, 0))?;
            let batch = batch
                .into_iter()
                .map(|e| self.train_sample(&policy, &register, e))
                .collect::<Result<Vec<_>, _>>()?;
            let losses = train_step(&mut policy, &batch, c.lr, c.sl_weight)?;
            let last = step == c.steps;
            let eval = if last || (c.eval_every > 0 && step % c.eval_every == 0) {
                Some(self.evaluate(&policy, step)?)
            } else {
                None
            };
            if let (true, Some(e)) = (last, &eval) {
                final_eval = e.clone();
            }
            metrics.push(RoundMetrics {
                step,
                generated,
                losses: Some(losses),
                eval,
                buffer_len: buffer.len(),
            });
        }
        Ok(ExperimentResult {
            metrics,
            initial_eval,
            final_eval,
            policy,
        })
    }
}

/// Runs one experiment on `problems`, each of which needs a ground truth
/// expressible in the toy vocabulary.
pub fn run_experiment(config: &ExperimentConfig, problems: &[Problem]) -> Result<ExperimentResult, ExperimentError> {
    config.validate()?;
    if problems.is_empty() {
        return Err(ExperimentError::InvalidConfig("no problems".into()));
    }
    let ground_truths = problems
        .iter()
        .map(|p| {
            p.ground_truth
                .as_deref()
                .and_then(vocab::encode)
                .ok_or_else(|| ExperimentError::UnencodableGroundTruth(p.id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let runner = Runner {
        config,
        problems,
        ground_truths,
        runtime: ToyRuntime {
            step_budget: config.step_budget,
        },
        limits: Limits::default(),
    };
    if config.workers == 0 {
        return runner.run();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
    pool.install(|| runner.run())
}
