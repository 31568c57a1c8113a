//! The bundled stdin/stdout problem suite.

use crate::dataset::read_problems;
use crate::types::Problem;

/// The suite in dataset (JSONL) format.
pub const SUITE_JSONL: &str = include_str!("../../data/toy_suite.jsonl");

pub fn problems() -> Vec<Problem> {
    read_problems(SUITE_JSONL.as_bytes()).expect("bundled suite is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::classify;
    use crate::sandbox::{Limits, TestRunner};
    use crate::toy::runtime::ToyRuntime;
    use crate::toy::vocab;
    use crate::types::{CandidateProgram, Verdict};

    #[test]
    fn suite_shape() {
        let ps = problems();
        assert!(ps.len() >= 10);
        assert!(ps.iter().all(|p| p.tests.len() >= 3));
    }

    #[test]
    fn ground_truths_fit_the_vocabulary_and_pass() {
        for p in problems() {
            let gt = p.ground_truth.clone().unwrap();
            let ids = vocab::encode(&gt).unwrap_or_else(|| panic!("{} not encodable", p.id));
            assert!(ids.len() <= p.max_tokens, "{} too long", p.id);
            let c = CandidateProgram::from_source(gt);
            let outcomes = ToyRuntime::default().run(&p, &c, &Limits::default()).unwrap();
            let fb = classify(&p, &c, &outcomes).unwrap();
            assert_eq!(fb.verdict, Verdict::Pass, "{}", p.id);
        }
    }
}
