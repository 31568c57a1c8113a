//! The fixed program vocabulary of the toy policy.
//!
//! Tokens carry their own spacing so that concatenating them yields source
//! text directly. Id 0 is the end-of-program token, whose text is empty.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::types::{CandidateProgram, Span};

pub type TokenId = u16;

pub const EOS: TokenId = 0;

pub const TOKENS: &[&str] = &[
    "",
    "\n",
    "    ",
    "  ",
    "print(",
    "input()",
    "int(",
    "len(",
    "max(",
    "min(",
    "sum(",
    "sorted(",
    "range(",
    "str(",
    "map(int, ",
    "list(",
    ".split()",
    ".upper()",
    ".lower()",
    "[::-1]",
    "[0]",
    "[-1]",
    "(",
    ")",
    ":",
    ", ",
    "*",
    " = ",
    " + ",
    " - ",
    " * ",
    " // ",
    " % ",
    " == ",
    " < ",
    "for ",
    " in ",
    "if ",
    "while ",
    "else:",
    "a",
    "b",
    "n",
    "i",
    "x",
    "s",
    "y",
    "0",
    "1",
    "2",
    "'",
    "\"\"\"",
];

pub fn size() -> usize {
    TOKENS.len()
}

pub fn text(id: TokenId) -> &'static str {
    TOKENS[id as usize]
}

fn index() -> &'static HashMap<&'static str, TokenId> {
    static INDEX: OnceLock<HashMap<&'static str, TokenId>> = OnceLock::new();
    INDEX.get_or_init(|| {
        TOKENS
            .iter()
            .enumerate()
            .map(|(i, t)| (*t, i as TokenId))
            .collect()
    })
}

pub fn id_of(token: &str) -> Option<TokenId> {
    index().get(token).copied()
}

/// Greedy longest-match encoding of `source`, followed by the end token.
/// `None` when some part of the source is not covered by the vocabulary.
pub fn encode(source: &str) -> Option<Vec<TokenId>> {
    let mut out = Vec::new();
    let mut rest = source;
    while !rest.is_empty() {
        let (id, len) = TOKENS
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, t)| rest.starts_with(**t))
            .map(|(i, t)| (i as TokenId, t.len()))
            .max_by_key(|&(_, len)| len)?;
        out.push(id);
        rest = &rest[len..];
    }
    out.push(EOS);
    Some(out)
}

/// Ids of a candidate's tokens, if all of them are vocabulary tokens.
pub fn ids_of(candidate: &CandidateProgram) -> Option<Vec<TokenId>> {
    candidate.tokens.iter().map(|t| id_of(t)).collect()
}

/// Builds the candidate for a token sequence.
pub fn candidate(ids: &[TokenId], logprobs: Vec<f64>, truncated: bool) -> CandidateProgram {
    let mut source = String::new();
    let mut tokens = Vec::with_capacity(ids.len());
    let mut spans = Vec::with_capacity(ids.len());
    for &id in ids {
        let t = text(id);
        let start = source.len();
        source.push_str(t);
        tokens.push(t.to_string());
        spans.push(Span::new(start, source.len()));
    }
    CandidateProgram {
        source,
        tokens,
        token_char_spans: spans,
        logprobs: Some(logprobs),
        truncated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::validate_candidate;

    #[test]
    fn tokens_are_unique() {
        assert_eq!(index().len(), TOKENS.len());
        assert_eq!(text(EOS), "");
    }

    #[test]
    fn encode_round_trips() {
        let src = "a, b = map(int, input().split())\nprint(a + b)";
        let ids = encode(src).unwrap();
        assert_eq!(*ids.last().unwrap(), EOS);
        let c = candidate(&ids, vec![-0.1; ids.len()], false);
        assert_eq!(c.source, src);
        assert!(validate_candidate(&c).is_empty());
        assert_eq!(ids_of(&c).unwrap(), ids);
        assert_eq!(encode("print(a == b)").unwrap()[2], id_of(" == ").unwrap());
    }

    #[test]
    fn unknown_text_is_rejected() {
        assert!(encode("import os").is_none());
    }
}
