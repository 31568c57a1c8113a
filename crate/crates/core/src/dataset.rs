//! JSONL datasets and candidate files.
//!
//! Dataset: one problem per line,
//! `{"id", "description", "tests": [{"input", "expected_output"}], "ground_truth"?, "max_tokens"}`.
//!
//! Candidates: one per line, `{"problem_id", "source", "tokens"?,
//! "token_char_spans"?, "logprobs"?, "truncated"?}`. Candidates without
//! tokens are split with the built-in lexer.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{validate_problem, CandidateProgram, Problem, Span};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
}

fn read_jsonl<T, R>(reader: R) -> Result<Vec<(usize, T)>, DatasetError>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| DatasetError::Parse {
            line: i + 1,
            source,
        })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

pub fn read_problems<R: BufRead>(reader: R) -> Result<Vec<Problem>, DatasetError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, problem) in read_jsonl::<Problem, _>(reader)? {
        if let Some(v) = validate_problem(&problem).into_iter().next() {
            return Err(DatasetError::Invalid {
                line,
                reason: v.to_string(),
            });
        }
        if !seen.insert(problem.id.clone()) {
            return Err(DatasetError::Invalid {
                line,
                reason: format!("duplicate id {:?}", problem.id),
            });
        }
        out.push(problem);
    }
    Ok(out)
}

pub fn load_problems(path: &Path) -> Result<Vec<Problem>, DatasetError> {
    read_problems(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn write_problems<W: Write>(mut w: W, problems: &[Problem]) -> std::io::Result<()> {
    for p in problems {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// One line of a candidates file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub problem_id: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_char_spans: Option<Vec<Span>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    #[serde(default)]
    pub truncated: bool,
}

impl CandidateRecord {
    pub fn into_candidate(self) -> CandidateProgram {
        let mut c = match (self.tokens, self.token_char_spans) {
            (Some(tokens), Some(spans)) => CandidateProgram {
                source: self.source,
                tokens,
                token_char_spans: spans,
                logprobs: None,
                truncated: false,
            },
            _ => CandidateProgram::from_source(self.source),
        };
        c.logprobs = self.logprobs;
        c.truncated = self.truncated;
        c
    }
}

pub fn read_candidates<R: BufRead>(reader: R) -> Result<Vec<CandidateRecord>, DatasetError> {
    Ok(read_jsonl(reader)?.into_iter().map(|(_, c)| c).collect())
}

pub fn load_candidates(path: &Path) -> Result<Vec<CandidateRecord>, DatasetError> {
    read_candidates(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_minimal_dataset() {
        let text = r#"{"id":"echo","description":"echo","tests":[{"input":"7","expected_output":"7"}],"max_tokens":32}

{"id":"add","tests":[{"input":"1 2","expected_output":"3"}],"ground_truth":"print(3)","max_tokens":8}
"#;
        let ps = read_problems(text.as_bytes()).unwrap();
        assert_eq!(ps.len(), 2);
        assert_eq!(ps[1].ground_truth.as_deref(), Some("print(3)"));
        let mut out = Vec::new();
        write_problems(&mut out, &ps).unwrap();
        assert_eq!(read_problems(&out[..]).unwrap(), ps);
    }

    #[test]
    fn rejects_bad_lines() {
        let err = read_problems("{\"id\":\"a\"".as_bytes()).unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 1, .. }));
        let err = read_problems(r#"{"id":"a","tests":[],"max_tokens":1}"#.as_bytes()).unwrap_err();
        assert!(matches!(err, DatasetError::Invalid { line: 1, .. }));
        let dup = r#"{"id":"a","tests":[{"input":"","expected_output":""}]}
{"id":"a","tests":[{"input":"","expected_output":""}]}"#;
        assert!(matches!(
            read_problems(dup.as_bytes()).unwrap_err(),
            DatasetError::Invalid { line: 2, .. }
        ));
    }

    #[test]
    fn candidate_without_tokens_is_lexed() {
        let recs = read_candidates(r#"{"problem_id":"a","source":"print(1)"}"#.as_bytes()).unwrap();
        let c = recs[0].clone().into_candidate();
        assert_eq!(c.tokens, vec!["print", "(", "1", ")"]);
    }
}
