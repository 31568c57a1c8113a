//! Deterministic lexeme splitter used when a candidate arrives without its
//! own tokenization.
//!
//! Every byte of the input belongs to exactly one lexeme:
//! - a line break (`\n` or `\r\n`),
//! - a run of other whitespace,
//! - a run of identifier characters (alphanumerics and `_`),
//! - any other single character.

use crate::types::Span;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Newline,
    Space,
    Word,
    Other,
}

fn class_of(c: char) -> Class {
    if c == '\n' || c == '\r' {
        Class::Newline
    } else if c.is_whitespace() {
        Class::Space
    } else if c.is_alphanumeric() || c == '_' {
        Class::Word
    } else {
        Class::Other
    }
}

/// Splits `source` into contiguous byte spans.
pub fn lex(source: &str) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut chars = source.char_indices().peekable();
    while let Some((start, c)) = chars.next() {
        let class = class_of(c);
        let mut end = start + c.len_utf8();
        match class {
            Class::Newline => {
                if c == '\r' {
                    if let Some(&(i, '\n')) = chars.peek() {
                        end = i + 1;
                        chars.next();
                    }
                }
            }
            Class::Space | Class::Word => {
                while let Some(&(i, next)) = chars.peek() {
                    if class_of(next) != class {
                        break;
                    }
                    end = i + next.len_utf8();
                    chars.next();
                }
            }
            Class::Other => {}
        }
        spans.push(Span::new(start, end));
    }
    spans
}

/// Lexes and returns the token strings alongside their spans.
pub fn tokens(source: &str) -> (Vec<String>, Vec<Span>) {
    let spans = lex(source);
    let toks = spans
        .iter()
        .map(|s| source[s.start..s.end].to_string())
        .collect();
    (toks, spans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_python_line() {
        let (toks, _) = tokens("a,b = map(int, input().split())\n");
        assert_eq!(
            toks,
            vec![
                "a", ",", "b", " ", "=", " ", "map", "(", "int", ",", " ", "input", "(", ")", ".",
                "split", "(", ")", ")", "\n"
            ]
        );
    }

    #[test]
    fn crlf_is_one_token() {
        let (toks, _) = tokens("x\r\ny");
        assert_eq!(toks, vec!["x", "\r\n", "y"]);
    }

    #[test]
    fn empty_source_has_no_tokens() {
        assert!(lex("").is_empty());
    }

    proptest! {
        #[test]
        fn spans_reassemble_source(s in "(\\PC|[\\n\\r\\t]){0,64}") {
            let spans = lex(&s);
            let mut cursor = 0;
            let mut rebuilt = String::new();
            for span in &spans {
                prop_assert_eq!(span.start, cursor);
                prop_assert!(span.end > span.start);
                rebuilt.push_str(&s[span.start..span.end]);
                cursor = span.end;
            }
            prop_assert_eq!(rebuilt, s);
        }
    }
}
