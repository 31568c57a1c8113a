use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use execfeedback::loss::{total_loss_with, LossTerms};
use execfeedback::passk::pass_at_k;
use execfeedback::reward::{self, RewardConfig};
use execfeedback::sandbox::{Limits, TestRunner};
use execfeedback::toy::experiment::{run_experiment, ExperimentConfig};
use execfeedback::toy::policy::ToyPolicy;
use execfeedback::toy::runtime::ToyRuntime;
use execfeedback::toy::suite;
use execfeedback::{classify, BaselineRewards, CandidateProgram, OnlineBuffer};
use execfeedback_bench::{buffer_entry, erroring_candidate};

fn rewards_and_losses(c: &mut Criterion) {
    let (cand, fb) = erroring_candidate(40);
    let config = RewardConfig::default();
    c.bench_function("reward_bundle_40_lines", |b| {
        b.iter(|| reward::bundle(black_box(&fb), black_box(&cand), &config).unwrap())
    });
    let entry = buffer_entry(40);
    let baseline = BaselineRewards { r_coarse: 1.0, r_adaptive: 1.0 };
    c.bench_function("total_loss_40_lines", |b| {
        b.iter(|| total_loss_with(black_box(&entry), &baseline, None, LossTerms::ALL).unwrap())
    });
    c.bench_function("pass_at_k_n200", |b| b.iter(|| pass_at_k(black_box(200), black_box(37), black_box(10)).unwrap()));
}

fn execution(c: &mut Criterion) {
    let problems = suite::problems();
    let p = &problems[0];
    let cand = CandidateProgram::from_source(p.ground_truth.clone().unwrap());
    let runtime = ToyRuntime::default();
    let limits = Limits::default();
    c.bench_function("toy_run_and_classify", |b| {
        b.iter(|| {
            let out = runtime.run(p, black_box(&cand), &limits).unwrap();
            classify(p, &cand, &out).unwrap()
        })
    });
    let policy = ToyPolicy::default();
    c.bench_function("toy_generate_32_tokens", |b| {
        let mut seed = 0;
        b.iter(|| {
            seed += 1;
            policy.generate(p, 32, 1.0, seed)
        })
    });
}

fn buffer(c: &mut Criterion) {
    let entry = buffer_entry(10);
    c.bench_function("buffer_push_at_capacity", |b| {
        let buf = OnlineBuffer::new(1000).unwrap();
        b.iter_batched(|| entry.clone(), |e| buf.push(e).unwrap(), BatchSize::SmallInput)
    });
    let full = OnlineBuffer::new(6400).unwrap();
    for _ in 0..6400 {
        full.push(entry.clone()).unwrap();
    }
    c.bench_function("buffer_sample_32_of_6400", |b| {
        let mut seed = 0;
        b.iter(|| {
            seed += 1;
            full.sample(32, seed).unwrap()
        })
    });
}

fn training(c: &mut Criterion) {
    let problems = suite::problems();
    let config = ExperimentConfig { steps: 10, eval_samples_per_problem: 4, ..ExperimentConfig::ablation_preset() };
    let mut group = c.benchmark_group("toy_training");
    group.sample_size(10);
    group.bench_function("online_10_steps", |b| b.iter(|| run_experiment(&config, &problems).unwrap()));
    group.finish();
}

criterion_group!(benches, rewards_and_losses, execution, buffer, training);
criterion_main!(benches);
