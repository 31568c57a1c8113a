//! A small interpreter for the subset of Python the toy policy can write.
//!
//! Programs are compiled in full before running, so syntax-family errors are
//! reported with no output, as CPython does. Execution is bounded by a step
//! budget; exhausting it is reported as a timeout.

mod eval;
mod lexer;
mod parser;
mod value;

use crate::sandbox::StructuredError;

pub use eval::DEFAULT_STEP_BUDGET;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompileErrorKind {
    Syntax,
    Indentation,
    TripleQuoted,
    /// Valid Python outside the supported subset.
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompileError {
    pub kind: CompileErrorKind,
    pub message: String,
    pub line: usize,
}

impl CompileError {
    fn new(kind: CompileErrorKind, message: impl Into<String>, line: usize) -> Self {
        CompileError {
            kind,
            message: message.into(),
            line,
        }
    }

    pub(crate) fn syntax(message: impl Into<String>, line: usize) -> Self {
        Self::new(CompileErrorKind::Syntax, message, line)
    }

    pub(crate) fn indentation(message: impl Into<String>, line: usize) -> Self {
        Self::new(CompileErrorKind::Indentation, message, line)
    }

    pub(crate) fn triple_quoted(message: impl Into<String>, line: usize) -> Self {
        Self::new(CompileErrorKind::TripleQuoted, message, line)
    }

    pub(crate) fn unsupported(what: &str, line: usize) -> Self {
        Self::new(CompileErrorKind::Unsupported, format!("{what} are not supported"), line)
    }

    pub fn exception_name(&self) -> &'static str {
        match self.kind {
            CompileErrorKind::Syntax => "SyntaxError",
            CompileErrorKind::Indentation => "IndentationError",
            CompileErrorKind::TripleQuoted => "TripleQuotedError",
            CompileErrorKind::Unsupported => "NotImplementedError",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ToyOutcome {
    Ok,
    Raised(StructuredError),
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyRun {
    pub stdout: String,
    pub outcome: ToyOutcome,
}

/// A parsed program, ready to run against any number of inputs.
#[derive(Debug, Clone)]
pub struct Compiled {
    body: Vec<parser::Stmt>,
}

impl Compiled {
    pub fn run(&self, input: &str, step_budget: u64) -> ToyRun {
        eval::execute(&self.body, input, step_budget)
    }
}

pub fn compile(source: &str) -> Result<Compiled, CompileError> {
    let body = parser::parse(lexer::tokenize(source)?)?;
    Ok(Compiled { body })
}

/// The report a compile error produces. Syntax-family errors on the last
/// line of a truncated program are flagged as likely caused by truncation.
pub fn compile_error_report(err: &CompileError, source: &str, truncated: bool) -> StructuredError {
    let last_line = source.lines().count().max(1);
    let mut report = StructuredError::new(err.exception_name(), err.message.clone(), Some(err.line));
    report.truncated_guess =
        truncated && err.kind != CompileErrorKind::Unsupported && err.line >= last_line;
    report
}

/// Compiles and runs `source` with `input` on stdin.
pub fn run_program(source: &str, input: &str, truncated: bool, step_budget: u64) -> ToyRun {
    match compile(source) {
        Ok(program) => program.run(input, step_budget),
        Err(e) => ToyRun {
            stdout: String::new(),
            outcome: ToyOutcome::Raised(compile_error_report(&e, source, truncated)),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(src: &str, input: &str) -> ToyRun {
        run_program(src, input, false, DEFAULT_STEP_BUDGET)
    }

    fn raised(src: &str, input: &str) -> StructuredError {
        match run(src, input).outcome {
            ToyOutcome::Raised(e) => e,
            other => panic!("expected an exception, got {other:?}"),
        }
    }

    #[test]
    fn echo_and_arithmetic() {
        let r = run("x = int(input())\nprint(x * 2 + 1)\n", "20\n");
        assert_eq!(r.outcome, ToyOutcome::Ok);
        assert_eq!(r.stdout, "41\n");
        let r = run("a, b = map(int, input().split())\nprint(a // b, a % b, -7 // 2)\n", "7 2");
        assert_eq!(r.stdout, "3 1 -4\n");
    }

    #[test]
    fn loops_and_collections() {
        let src = "n = int(input())\nxs = []\nfor i in range(n):\n    if i % 2 == 0:\n        xs.append(i)\n    else:\n        continue\nprint(xs, len(xs), sum(xs))\nd = {}\nfor w in 'b a b'.split():\n    d[w] = d.get(w, 0) + 1\nprint(sorted(d.items()))\n";
        let r = run(src, "5");
        assert_eq!(r.stdout, "[0, 2, 4] 3 6\n[('a', 1), ('b', 2)]\n");
    }

    #[test]
    fn strings_and_slices() {
        let r = run("s = input()\nprint(s[::-1], s.upper(), ' '.join(['x', 'y']), s[1:3])\n", "hello");
        assert_eq!(r.stdout, "olleh HELLO x y el\n");
        let r = run("print([x * x for x in range(4) if x], repr(\"it's\"), repr('a' 'b'))\n", "");
        assert_eq!(r.stdout, "[1, 4, 9] \"it's\" 'ab'\n");
    }

    #[test]
    fn runtime_errors_carry_lines() {
        let e = raised("x = 1\nprint(y)\n", "");
        assert_eq!((e.exception_name.as_str(), e.line), ("NameError", Some(2)));
        let e = raised("print(1)\nprint([1][3])\n", "");
        assert_eq!((e.exception_name.as_str(), e.line), ("IndexError", Some(2)));
        let e = raised("x = int('a')\n", "");
        assert_eq!(e.exception_name, "ValueError");
        let e = raised("print(1 // 0)\n", "");
        assert_eq!(e.exception_name, "ZeroDivisionError");
        let e = raised("print('a' + 1)\n", "");
        assert_eq!(e.exception_name, "TypeError");
        let e = raised("x = input()\nx = input()\n", "one line");
        assert_eq!((e.exception_name.as_str(), e.line), ("EOFError", Some(2)));
        let e = raised("d = {}\nprint(d['k'])\n", "");
        assert_eq!(e.exception_name, "KeyError");
        let e = raised("x = 5\nx.foo()\n", "");
        assert_eq!(e.exception_name, "AttributeError");
        let e = raised("import os\n", "");
        assert_eq!(e.exception_name, "NotImplementedError");
    }

    #[test]
    fn compile_errors_stop_before_output() {
        let r = run("print(1)\nprint(2\n", "");
        assert_eq!(r.stdout, "");
        let ToyOutcome::Raised(e) = r.outcome else { panic!() };
        assert_eq!((e.exception_name.as_str(), e.line), ("SyntaxError", Some(2)));
        let e = raised("if True:\nprint(1)\n", "");
        assert_eq!((e.exception_name.as_str(), e.line), ("IndentationError", Some(2)));
        let e = raised("x = 1\n s = 2\n", "");
        assert_eq!(e.exception_name, "IndentationError");
        let e = raised("s = \"\"\"abc\n", "");
        assert_eq!((e.exception_name.as_str(), e.line), ("TripleQuotedError", Some(1)));
        let e = raised("for i in range(3):\n", "");
        assert_eq!(e.exception_name, "IndentationError");
        let e = raised("break\n", "");
        assert_eq!(e.exception_name, "SyntaxError");
        let e = raised("x = = 1\n", "");
        assert_eq!(e.exception_name, "SyntaxError");
    }

    #[test]
    fn truncation_guess_only_on_last_line() {
        let r = run_program("print(1)\nprint(int(input(\n", "", true, 1000);
        let ToyOutcome::Raised(e) = r.outcome else { panic!() };
        assert!(e.truncated_guess);
        let r = run_program("print(1\nprint(2)\n", "", true, 1000);
        let ToyOutcome::Raised(e) = r.outcome else { panic!() };
        assert!(!e.truncated_guess);
    }

    #[test]
    fn step_budget_is_a_timeout() {
        let r = run_program("while True:\n    pass\n", "", false, 10_000);
        assert_eq!(r.outcome, ToyOutcome::Timeout);
    }

    #[test]
    fn overflow_is_reported() {
        let e = raised("print(10 ** 30)\n", "");
        assert_eq!(e.exception_name, "OverflowError");
    }

    #[test]
    fn lazy_map_errors_surface_when_consumed() {
        let src = "xs = map(int, input().split())\nfor x in xs:\n    print(x)\n    break\n";
        let r = run(src, "1 a");
        assert_eq!(r.outcome, ToyOutcome::Ok);
        assert_eq!(r.stdout, "1\n");
        let e = raised("xs = map(int, 'a b'.split())\nprint(list(xs))\n", "");
        assert_eq!((e.exception_name.as_str(), e.line), ("ValueError", Some(2)));
    }
}
