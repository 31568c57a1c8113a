//! Line-delimited JSON encoding of buffer entries.
//!
//! One record per line:
//!
//! ```text
//! {"problem_id":..,"source":..,"tokens":[..],"token_char_spans":[[s,e],..],
//!  "logprobs":[..],"truncated":false,"feedback":{..},"rewards":{..},
//!  "baseline":{..},"created_at":n}
//! ```
//!
//! Floats are written in shortest round-trip form, so decoding returns the
//! exact bit patterns that were encoded. JSON string escaping keeps every
//! record on a single line.

use crate::types::BufferEntry;

pub fn encode(entry: &BufferEntry) -> String {
    serde_json::to_string(entry).expect("buffer entries always serialize")
}

pub fn decode(line: &str) -> serde_json::Result<BufferEntry> {
    serde_json::from_str(line)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{
        BaselineRewards, CandidateProgram, Category, Feedback, RewardBundle, Span, SubError,
    };
    use proptest::prelude::*;

    fn arb_entry() -> impl Strategy<Value = BufferEntry> {
        (
            "[a-z_]{1,8}",
            "(\\PC|\n){0,40}",
            any::<bool>(),
            (0usize..14, any::<bool>(), 0usize..6, 0usize..6),
            (-1.0f64..1.0, -0.3f64..1.0, any::<f64>(), any::<u64>()),
        )
            .prop_map(|(pid, src, truncated, fb, (rc, ra, bw, seq))| {
                let mut candidate = CandidateProgram::from_source(src);
                let t = candidate.len();
                candidate.logprobs =
                    Some((0..t).map(|i| -(i as f64) * 0.1234567890123 - 1e-300).collect());
                candidate.truncated = truncated;
                let (kind, err, n_pass, n_fail) = fb;
                let feedback = if err {
                    Feedback::error(SubError::ALL[kind], Category::Line, Some(1), n_pass, n_fail)
                } else {
                    Feedback::failure(n_pass, n_fail)
                };
                BufferEntry {
                    problem_id: pid,
                    candidate,
                    feedback,
                    rewards: RewardBundle {
                        r_coarse: rc,
                        r_fine: -0.3,
                        r_adaptive: ra,
                        span_coarse: Span::new(0, t),
                        span_fine: Span::new(0, t),
                        span_adaptive: Span::new(0, t),
                        fine_weight: if bw.is_finite() { bw } else { 0.1 },
                        adaptive_active: !truncated,
                    },
                    baseline: BaselineRewards {
                        r_coarse: rc / 3.0,
                        r_adaptive: ra / 7.0,
                    },
                    created_seq: seq,
                }
            })
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(e in arb_entry()) {
            let line = encode(&e);
            prop_assert!(!line.contains('\n'));
            let back = decode(&line).unwrap();
            prop_assert_eq!(back, e);
        }
    }

    #[test]
    fn record_uses_wire_field_names() {
        let e = crate::buffer::tests::entry("z");
        let v: serde_json::Value = serde_json::from_str(&encode(&e)).unwrap();
        for key in [
            "problem_id",
            "source",
            "tokens",
            "token_char_spans",
            "logprobs",
            "feedback",
            "rewards",
            "created_at",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["token_char_spans"][0], serde_json::json!([0, 5]));
    }
}
