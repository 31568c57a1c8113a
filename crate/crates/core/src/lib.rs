//! Execution feedback for program synthesis: run candidate programs against
//! unit tests, classify what happened, and turn the outcome into coarse,
//! fine-grained and adaptive rewards and the matching policy-gradient losses.
//!
//! The toy module holds a complete desk-scale training loop built on the
//! same pieces.

pub mod buffer;
pub mod classify;
pub mod dataset;
pub mod loss;
pub mod passk;
pub mod report;
pub mod reward;
pub mod sandbox;
pub mod tokenize;
pub mod toy;
pub mod types;

pub use buffer::OnlineBuffer;
pub use classify::{classify, error_distribution, locate_span, ErrorDistribution};
pub use loss::{total_loss, total_loss_with, LossTerms};
pub use passk::pass_at_k;
pub use reward::{BaselineRegister, FineWeight, RewardConfig};
pub use sandbox::{Limits, RawTestOutcome, StructuredError, SubprocessExecutor, TestRunner};
pub use types::*;
