use super::CompileError;

#[derive(Debug, Clone, PartialEq)]
pub enum TokKind {
    Name(String),
    Int(i64),
    Str(String),
    Op(&'static str),
    Newline,
    Indent,
    Dedent,
    End,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tok {
    pub kind: TokKind,
    pub line: usize,
}

const OPS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "**", "//", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=",
    "&=", "|=", "^=", "->", "<<", ">>", ":=", "+", "-", "*", "/", "%", "(", ")", "[", "]", "{",
    "}", ",", ":", ".", "=", "<", ">", ";", "@", "&", "|", "^", "~",
];

const MAX_NESTING: usize = 200;
const MAX_INDENT_LEVELS: usize = 100;

pub fn tokenize(src: &str) -> Result<Vec<Tok>, CompileError> {
    Lexer::new(src).run()
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    out: Vec<Tok>,
    indents: Vec<usize>,
    brackets: Vec<(char, usize)>,
}

impl Lexer {
    fn new(src: &str) -> Self {
        Lexer {
            chars: src.chars().collect(),
            pos: 0,
            line: 1,
            out: Vec::new(),
            indents: vec![0],
            brackets: Vec::new(),
        }
    }

    fn peek(&self, off: usize) -> Option<char> {
        self.chars.get(self.pos + off).copied()
    }

    fn push(&mut self, kind: TokKind, line: usize) {
        self.out.push(Tok { kind, line });
    }

    fn at_line_start(&self) -> bool {
        matches!(
            self.out.last().map(|t| &t.kind),
            None | Some(TokKind::Newline) | Some(TokKind::Indent) | Some(TokKind::Dedent)
        )
    }

    fn run(mut self) -> Result<Vec<Tok>, CompileError> {
        let mut line_start = true;
        while self.pos < self.chars.len() {
            if line_start && self.brackets.is_empty() {
                line_start = false;
                if self.indentation()? {
                    continue;
                }
            }
            let c = self.chars[self.pos];
            match c {
                '\n' | '\r' => {
                    if c == '\r' && self.peek(1) == Some('\n') {
                        self.pos += 1;
                    }
                    self.pos += 1;
                    if self.brackets.is_empty() && !self.at_line_start() {
                        self.push(TokKind::Newline, self.line);
                    }
                    self.line += 1;
                    line_start = true;
                }
                ' ' | '\t' | '\x0c' => self.pos += 1,
                '#' => {
                    while let Some(ch) = self.peek(0) {
                        if ch == '\n' || ch == '\r' {
                            break;
                        }
                        self.pos += 1;
                    }
                }
                '\\' => {
                    if self.peek(1) == Some('\n') {
                        self.pos += 2;
                        self.line += 1;
                    } else {
                        return Err(CompileError::syntax(
                            "unexpected character after line continuation character",
                            self.line,
                        ));
                    }
                }
                '\'' | '"' => self.string(c)?,
                c if c.is_ascii_digit() => self.number()?,
                c if c.is_alphabetic() || c == '_' => {
                    let start = self.pos;
                    while let Some(ch) = self.peek(0) {
                        if ch.is_alphanumeric() || ch == '_' {
                            self.pos += 1;
                        } else {
                            break;
                        }
                    }
                    let name: String = self.chars[start..self.pos].iter().collect();
                    self.push(TokKind::Name(name), self.line);
                }
                _ => self.operator()?,
            }
        }
        if let Some(&(open, line)) = self.brackets.last() {
            return Err(CompileError::syntax(format!("'{open}' was never closed"), line));
        }
        let last_line = self.line;
        if !self.at_line_start() {
            self.push(TokKind::Newline, last_line);
        }
        while self.indents.len() > 1 {
            self.indents.pop();
            self.push(TokKind::Dedent, last_line);
        }
        self.push(TokKind::End, last_line);
        Ok(self.out)
    }

    /// Measures leading whitespace and emits Indent/Dedent. Returns true when
    /// the line is blank or a comment (nothing emitted).
    fn indentation(&mut self) -> Result<bool, CompileError> {
        let mut width = 0;
        let mut p = self.pos;
        while let Some(&ch) = self.chars.get(p) {
            match ch {
                ' ' => width += 1,
                '\t' => width = (width / 8 + 1) * 8,
                '\x0c' => width = 0,
                _ => break,
            }
            p += 1;
        }
        match self.chars.get(p) {
            None | Some('\n') | Some('\r') | Some('#') => {
                self.pos = p;
                return Ok(true);
            }
            _ => {}
        }
        self.pos = p;
        let current = *self.indents.last().expect("indent stack never empty");
        if width > current {
            if self.indents.len() > MAX_INDENT_LEVELS {
                return Err(CompileError::indentation("too many levels of indentation", self.line));
            }
            self.indents.push(width);
            self.push(TokKind::Indent, self.line);
        } else if width < current {
            while *self.indents.last().expect("indent stack never empty") > width {
                self.indents.pop();
                self.push(TokKind::Dedent, self.line);
            }
            if *self.indents.last().expect("indent stack never empty") != width {
                return Err(CompileError::indentation(
                    "unindent does not match any outer indentation level",
                    self.line,
                ));
            }
        }
        Ok(false)
    }

    fn number(&mut self) -> Result<(), CompileError> {
        let start = self.pos;
        while let Some(ch) = self.peek(0) {
            if ch.is_ascii_digit() || ch == '_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text: String = self.chars[start..self.pos].iter().filter(|&&c| c != '_').collect();
        match self.peek(0) {
            Some('.') | Some('j') | Some('J') => {
                return Err(CompileError::unsupported("float and complex literals", self.line));
            }
            Some('e') | Some('E')
                if self.peek(1).is_some_and(|c| c.is_ascii_digit() || c == '+' || c == '-') =>
            {
                return Err(CompileError::unsupported("float and complex literals", self.line));
            }
            Some(ch) if ch.is_alphanumeric() || ch == '_' => {
                if text == "0" && matches!(ch, 'x' | 'X' | 'o' | 'O' | 'b' | 'B') {
                    return Err(CompileError::unsupported("non-decimal literals", self.line));
                }
                return Err(CompileError::syntax("invalid decimal literal", self.line));
            }
            _ => {}
        }
        if text.len() > 1 && text.starts_with('0') && text.chars().any(|c| c != '0') {
            return Err(CompileError::syntax(
                "leading zeros in decimal integer literals are not permitted",
                self.line,
            ));
        }
        let value = text
            .parse::<i64>()
            .map_err(|_| CompileError::unsupported("integer literal beyond 64 bits", self.line))?;
        self.push(TokKind::Int(value), self.line);
        Ok(())
    }

    fn string(&mut self, quote: char) -> Result<(), CompileError> {
        let start_line = self.line;
        let triple = self.peek(1) == Some(quote) && self.peek(2) == Some(quote);
        let mut value = String::new();
        if triple {
            self.pos += 3;
            loop {
                match self.peek(0) {
                    None => {
                        return Err(CompileError::triple_quoted(
                            format!("unterminated triple-quoted string literal (detected at line {})", self.line),
                            start_line,
                        ))
                    }
                    Some(c) if c == quote && self.peek(1) == Some(quote) && self.peek(2) == Some(quote) => {
                        self.pos += 3;
                        break;
                    }
                    Some('\\') => {
                        self.pos += 1;
                        if let Some(e) = self.escape() {
                            value.push_str(&e);
                        }
                    }
                    Some(c) => {
                        if c == '\n' {
                            self.line += 1;
                        }
                        value.push(c);
                        self.pos += 1;
                    }
                }
            }
        } else {
            self.pos += 1;
            loop {
                match self.peek(0) {
                    None | Some('\n') | Some('\r') => {
                        return Err(CompileError::syntax(
                            format!("unterminated string literal (detected at line {})", self.line),
                            self.line,
                        ))
                    }
                    Some(c) if c == quote => {
                        self.pos += 1;
                        break;
                    }
                    Some('\\') => {
                        self.pos += 1;
                        if let Some(e) = self.escape() {
                            value.push_str(&e);
                        }
                    }
                    Some(c) => {
                        value.push(c);
                        self.pos += 1;
                    }
                }
            }
        }
        self.push(TokKind::Str(value), start_line);
        Ok(())
    }

    /// Consumes the character after a backslash.
    fn escape(&mut self) -> Option<String> {
        let c = self.peek(0)?;
        self.pos += 1;
        Some(match c {
            'n' => "\n".into(),
            't' => "\t".into(),
            'r' => "\r".into(),
            '0' => "\0".into(),
            '\\' => "\\".into(),
            '\'' => "'".into(),
            '"' => "\"".into(),
            '\n' => {
                self.line += 1;
                String::new()
            }
            other => format!("\\{other}"),
        })
    }

    fn operator(&mut self) -> Result<(), CompileError> {
        let line = self.line;
        for op in OPS {
            let n = op.chars().count();
            if self.chars.len() >= self.pos + n
                && op.chars().zip(&self.chars[self.pos..]).all(|(a, &b)| a == b)
            {
                self.pos += n;
                match *op {
                    "(" | "[" | "{" => {
                        if self.brackets.len() >= MAX_NESTING {
                            return Err(CompileError::syntax("too many nested parentheses", line));
                        }
                        self.brackets.push((op.chars().next().unwrap(), line));
                    }
                    ")" | "]" | "}" => {
                        let close = op.chars().next().unwrap();
                        match self.brackets.pop() {
                            None => {
                                return Err(CompileError::syntax(format!("unmatched '{close}'"), line))
                            }
                            Some((open, _)) if matching(open) != close => {
                                return Err(CompileError::syntax(
                                    format!(
                                        "closing parenthesis '{close}' does not match opening parenthesis '{open}'"
                                    ),
                                    line,
                                ))
                            }
                            Some(_) => {}
                        }
                    }
                    _ => {}
                }
                self.push(TokKind::Op(op), line);
                return Ok(());
            }
        }
        let c = self.chars[self.pos];
        Err(CompileError::syntax(
            format!("invalid character '{c}' (U+{:04X})", c as u32),
            line,
        ))
    }
}

fn matching(open: char) -> char {
    match open {
        '(' => ')',
        '[' => ']',
        _ => '}',
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::CompileErrorKind;

    fn kinds(src: &str) -> Vec<TokKind> {
        tokenize(src).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn indentation_tokens() {
        let k = kinds("for i in x:\n    print(i)\nprint(1)\n");
        assert!(k.contains(&TokKind::Indent));
        assert!(k.contains(&TokKind::Dedent));
        assert_eq!(k.last(), Some(&TokKind::End));
    }

    #[test]
    fn brackets_join_lines() {
        let k = kinds("print(1,\n2)\n");
        assert_eq!(k.iter().filter(|t| **t == TokKind::Newline).count(), 1);
    }

    #[test]
    fn lexical_errors() {
        let e = tokenize("x = '''abc\n").unwrap_err();
        assert_eq!((e.kind, e.line), (CompileErrorKind::TripleQuoted, 1));
        let e = tokenize("x = 'abc\n").unwrap_err();
        assert_eq!(e.kind, CompileErrorKind::Syntax);
        let e = tokenize("if x:\n    a\n  b\n").unwrap_err();
        assert_eq!((e.kind, e.line), (CompileErrorKind::Indentation, 3));
        let e = tokenize("print(1\nx = 2\n").unwrap_err();
        assert_eq!((e.kind, e.line), (CompileErrorKind::Syntax, 1));
        let e = tokenize("x = 1)\n").unwrap_err();
        assert_eq!(e.message, "unmatched ')'");
        let e = tokenize("x = 01\n").unwrap_err();
        assert_eq!(e.kind, CompileErrorKind::Syntax);
        let e = tokenize("x = 1.5\n").unwrap_err();
        assert_eq!(e.kind, CompileErrorKind::Unsupported);
    }

    #[test]
    fn method_call_on_int_literal_dot() {
        // `1 .bit_length` style is rare; `x.y` lexes as name-dot-name
        assert_eq!(
            kinds("a.b"),
            vec![
                TokKind::Name("a".into()),
                TokKind::Op("."),
                TokKind::Name("b".into()),
                TokKind::Newline,
                TokKind::End
            ]
        );
    }
}
