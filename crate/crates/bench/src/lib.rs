//! Shared inputs for the engine benchmarks.

use execfeedback::reward::{self, RewardConfig};
use execfeedback::{BaselineRewards, BufferEntry, CandidateProgram, Category, Feedback, SubError};

/// A `lines`-line program whose second line raises.
pub fn erroring_candidate(lines: usize) -> (CandidateProgram, Feedback) {
    let source: String = (0..lines).map(|i| format!("x{i} = int(input()) + {i}\n")).collect();
    let c = CandidateProgram::from_source(source);
    let n = c.len();
    let c = c.with_logprobs((0..n).map(|i| -0.01 * (i % 17) as f64 - 0.01).collect());
    let fb = Feedback::error(SubError::NameError, Category::Line, Some(2.min(lines)), 1, 3);
    (c, fb)
}

pub fn buffer_entry(lines: usize) -> BufferEntry {
    let (candidate, feedback) = erroring_candidate(lines);
    let rewards = reward::bundle(&feedback, &candidate, &RewardConfig::default()).expect("valid fixture");
    BufferEntry {
        problem_id: "bench".into(),
        candidate,
        feedback,
        rewards,
        baseline: BaselineRewards::default(),
        created_seq: 0,
    }
}
