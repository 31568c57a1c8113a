//! Shared value types: problems, candidates, feedback, rewards, buffer
//! entries and loss breakdowns, plus the invariant checker used at every
//! module boundary.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::tokenize;

/// Half-open interval `[start, end)`.
///
/// Used both for byte ranges into a candidate's source and for token index
/// ranges. Serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub const EMPTY: Span = Span { start: 0, end: 0 };

    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index < self.end
    }

    /// True when both intervals share at least one position. Zero-width
    /// intervals intersect nothing.
    pub fn intersects(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Self {
        Span { start, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(span: Span) -> Self {
        [span.start, span.end]
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Exact,
    #[default]
    WhitespaceNormalized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: String,
    pub expected_output: String,
    #[serde(default)]
    pub comparison: Comparison,
}

impl TestCase {
    pub fn new(input: impl Into<String>, expected_output: impl Into<String>) -> Self {
        TestCase {
            input: input.into(),
            expected_output: expected_output.into(),
            comparison: Comparison::default(),
        }
    }

    /// Whether `stdout` satisfies this test under its comparison rule.
    ///
    /// Whitespace-normalized comparison treats any run of whitespace
    /// (including newlines) as a single separator and ignores leading and
    /// trailing whitespace.
    pub fn accepts(&self, stdout: &str) -> bool {
        match self.comparison {
            Comparison::Exact => stdout == self.expected_output,
            Comparison::WhitespaceNormalized => stdout
                .split_whitespace()
                .eq(self.expected_output.split_whitespace()),
        }
    }
}

fn default_max_tokens() -> usize {
    512
}

/// A task description with its unit tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub tests: Vec<TestCase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
}

/// Generated program text with its tokenization and per-token
/// log-probabilities.
///
/// `token_char_spans` are byte offsets into `source`. Zero-width spans are
/// permitted (e.g. an end-of-sequence token) as long as the spans stay
/// contiguous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateProgram {
    pub source: String,
    pub tokens: Vec<String>,
    pub token_char_spans: Vec<Span>,
    #[serde(default)]
    pub logprobs: Option<Vec<f64>>,
    #[serde(default)]
    pub truncated: bool,
}

impl CandidateProgram {
    /// Builds a candidate from raw source using the built-in lexer.
    pub fn from_source(source: impl Into<String>) -> Self {
        let source = source.into();
        let spans = tokenize::lex(&source);
        let tokens = spans
            .iter()
            .map(|s| source[s.start..s.end].to_string())
            .collect();
        CandidateProgram {
            source,
            tokens,
            token_char_spans: spans,
            logprobs: None,
            truncated: false,
        }
    }

    pub fn with_logprobs(mut self, logprobs: Vec<f64>) -> Self {
        self.logprobs = Some(logprobs);
        self
    }

    /// Sequence length T.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of lines, counted the way `str.lines` counts them: a trailing
    /// newline does not open a new line.
    pub fn line_count(&self) -> usize {
        self.source.lines().count()
    }

    /// Byte range of 1-based `line`, including its terminating newline.
    pub fn line_byte_range(&self, line: usize) -> Option<Span> {
        if line == 0 {
            return None;
        }
        let mut start = 0;
        for (idx, text) in self.source.split_inclusive('\n').enumerate() {
            if idx + 1 == line {
                return Some(Span::new(start, start + text.len()));
            }
            start += text.len();
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Failure,
    Error,
}

impl Verdict {
    pub const ALL: [Verdict; 3] = [Verdict::Pass, Verdict::Failure, Verdict::Error];

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "Pass",
            Verdict::Failure => "Failure",
            Verdict::Error => "Error",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The fourteen error kinds a candidate can be charged with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubError {
    SyntaxError,
    IndexError,
    TypeError,
    ValueError,
    #[serde(rename = "EOFError")]
    EofError,
    TimeoutError,
    NameError,
    KeyError,
    ImportError,
    ZeroDivisionError,
    RecursionError,
    TripleQuotedError,
    IndentationError,
    Else,
}

impl SubError {
    pub const ALL: [SubError; 14] = [
        SubError::SyntaxError,
        SubError::IndexError,
        SubError::TypeError,
        SubError::ValueError,
        SubError::EofError,
        SubError::TimeoutError,
        SubError::NameError,
        SubError::KeyError,
        SubError::ImportError,
        SubError::ZeroDivisionError,
        SubError::RecursionError,
        SubError::TripleQuotedError,
        SubError::IndentationError,
        SubError::Else,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SubError::SyntaxError => "SyntaxError",
            SubError::IndexError => "IndexError",
            SubError::TypeError => "TypeError",
            SubError::ValueError => "ValueError",
            SubError::EofError => "EOFError",
            SubError::TimeoutError => "TimeoutError",
            SubError::NameError => "NameError",
            SubError::KeyError => "KeyError",
            SubError::ImportError => "ImportError",
            SubError::ZeroDivisionError => "ZeroDivisionError",
            SubError::RecursionError => "RecursionError",
            SubError::TripleQuotedError => "TripleQuotedError",
            SubError::IndentationError => "IndentationError",
            SubError::Else => "Else",
        }
    }

    /// Maps an interpreter exception class name onto a kind. Subclasses that
    /// the interpreter raises under their own name fold into their parent
    /// row; anything unrecognised is `Else`.
    pub fn from_exception_name(name: &str) -> SubError {
        match name {
            "SyntaxError" => SubError::SyntaxError,
            "IndexError" => SubError::IndexError,
            "TypeError" => SubError::TypeError,
            "ValueError" | "UnicodeDecodeError" => SubError::ValueError,
            "EOFError" => SubError::EofError,
            "TimeoutError" => SubError::TimeoutError,
            "NameError" | "UnboundLocalError" => SubError::NameError,
            "KeyError" => SubError::KeyError,
            "ImportError" | "ModuleNotFoundError" => SubError::ImportError,
            "ZeroDivisionError" => SubError::ZeroDivisionError,
            "RecursionError" => SubError::RecursionError,
            "TripleQuotedError" => SubError::TripleQuotedError,
            "IndentationError" | "TabError" => SubError::IndentationError,
            _ => SubError::Else,
        }
    }

    /// Members of the compile-time syntax family, charged the harshest
    /// coarse penalty.
    pub fn is_syntax_family(self) -> bool {
        matches!(
            self,
            SubError::SyntaxError | SubError::TripleQuotedError | SubError::IndentationError
        )
    }
}

impl fmt::Display for SubError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Penalty routing for an error: whole program, the faulting line, or none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "U_whole", alias = "U_global")]
    Whole,
    #[serde(rename = "U_line")]
    Line,
    #[serde(rename = "U_ignore")]
    Ignore,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Whole => "U_whole",
            Category::Line => "U_line",
            Category::Ignore => "U_ignore",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_error: Option<SubError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    /// 1-based line in the candidate source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_line: Option<usize>,
    pub n_pass: usize,
    pub n_fail: usize,
}

impl Feedback {
    pub fn pass(n_tests: usize) -> Self {
        Feedback {
            verdict: Verdict::Pass,
            sub_error: None,
            category: None,
            error_line: None,
            n_pass: n_tests,
            n_fail: 0,
        }
    }

    pub fn failure(n_pass: usize, n_fail: usize) -> Self {
        Feedback {
            verdict: Verdict::Failure,
            sub_error: None,
            category: None,
            error_line: None,
            n_pass,
            n_fail,
        }
    }

    pub fn error(
        sub_error: SubError,
        category: Category,
        error_line: Option<usize>,
        n_pass: usize,
        n_fail: usize,
    ) -> Self {
        Feedback {
            verdict: Verdict::Error,
            sub_error: Some(sub_error),
            category: Some(category),
            error_line,
            n_pass,
            n_fail,
        }
    }
}

/// The three rewards of one candidate together with their token spans and
/// the fine-span weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBundle {
    pub r_coarse: f64,
    pub r_fine: f64,
    pub r_adaptive: f64,
    pub span_coarse: Span,
    pub span_fine: Span,
    pub span_adaptive: Span,
    pub fine_weight: f64,
    /// False when the adaptive term is switched off for this sample's
    /// verdict (see `AdaptiveScope`).
    #[serde(default = "default_true")]
    pub adaptive_active: bool,
}

fn default_true() -> bool {
    true
}

/// Rewards of the per-problem best sample, subtracted as an advantage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BaselineRewards {
    pub r_coarse: f64,
    pub r_adaptive: f64,
}

/// One record of the online buffer.
///
/// On the wire the candidate's fields are inlined and `created_seq` is
/// named `created_at`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub problem_id: String,
    #[serde(flatten)]
    pub candidate: CandidateProgram,
    pub feedback: Feedback,
    pub rewards: RewardBundle,
    /// Baseline rewards in force when the sample was graded.
    #[serde(default)]
    pub baseline: BaselineRewards,
    #[serde(rename = "created_at", default)]
    pub created_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_sl: f64,
    pub l_coarse: f64,
    pub l_fine: f64,
    pub l_adaptive: f64,
    pub l_total: f64,
    /// Coefficient of `-logprob_t` in the summed RL losses.
    pub per_token_weights: Vec<f64>,
}

/// One broken invariant: which field, which rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: String,
}

impl Violation {
    fn new(field: &'static str, rule: impl Into<String>) -> Self {
        Violation {
            field,
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Checks every problem and candidate invariant. An empty result means the
/// pair is well formed.
pub fn validate(problem: &Problem, candidate: &CandidateProgram) -> Vec<Violation> {
    let mut out = validate_problem(problem);
    out.extend(validate_candidate(candidate));
    out
}

pub fn validate_problem(problem: &Problem) -> Vec<Violation> {
    let mut out = Vec::new();
    if problem.id.is_empty() {
        out.push(Violation::new("id", "id must be non-empty"));
    }
    if problem.tests.is_empty() {
        out.push(Violation::new("tests", "at least one test required"));
    }
    if problem.max_tokens == 0 {
        out.push(Violation::new("max_tokens", "max_tokens must be >= 1"));
    }
    out
}

pub fn validate_candidate(candidate: &CandidateProgram) -> Vec<Violation> {
    let mut out = Vec::new();
    let t = candidate.tokens.len();
    if t == 0 {
        out.push(Violation::new("tokens", "at least one token required"));
    }
    if candidate.token_char_spans.len() != t {
        out.push(Violation::new(
            "token_char_spans",
            format!(
                "spans length mismatch ({} tokens, {} spans)",
                t,
                candidate.token_char_spans.len()
            ),
        ));
    } else {
        let mut cursor = 0;
        for (i, span) in candidate.token_char_spans.iter().enumerate() {
            if span.start != cursor || span.end < span.start {
                out.push(Violation::new(
                    "token_char_spans",
                    format!("span {i} {span} is not contiguous with the previous span"),
                ));
                break;
            }
            match candidate.source.get(span.start..span.end) {
                Some(text) if text == candidate.tokens[i] => {}
                Some(_) => {
                    out.push(Violation::new(
                        "tokens",
                        format!("token {i} does not match its source slice"),
                    ));
                    break;
                }
                None => {
                    out.push(Violation::new(
                        "token_char_spans",
                        format!("span {i} {span} is outside the source"),
                    ));
                    break;
                }
            }
            cursor = span.end;
        }
        if out.is_empty() && cursor != candidate.source.len() {
            out.push(Violation::new(
                "token_char_spans",
                "spans do not cover the whole source",
            ));
        }
    }
    if let Some(lp) = &candidate.logprobs {
        if lp.len() != t {
            out.push(Violation::new(
                "logprobs",
                format!("logprobs length mismatch ({} tokens, {} logprobs)", t, lp.len()),
            ));
        }
        if lp.iter().any(|x| x.is_nan() || *x > 0.0) {
            out.push(Violation::new("logprobs", "every logprob must be <= 0"));
        }
    }
    out
}

pub fn validate_feedback(feedback: &Feedback, n_tests: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    let passed = feedback.verdict == Verdict::Pass;
    if passed != (feedback.n_fail == 0 && feedback.sub_error.is_none()) {
        out.push(Violation::new(
            "verdict",
            "Pass iff n_fail == 0 and sub_error absent",
        ));
    }
    if feedback.verdict == Verdict::Error {
        if feedback.sub_error.is_none() {
            out.push(Violation::new("sub_error", "Error requires sub_error"));
        }
        if feedback.category.is_none() {
            out.push(Violation::new("category", "Error requires category"));
        }
    }
    if feedback.category == Some(Category::Line) && feedback.error_line.is_none() {
        out.push(Violation::new("error_line", "U_line requires error_line"));
    }
    if feedback.n_pass + feedback.n_fail > n_tests {
        out.push(Violation::new(
            "n_pass",
            format!(
                "n_pass + n_fail = {} exceeds {} tests",
                feedback.n_pass + feedback.n_fail,
                n_tests
            ),
        ));
    }
    out
}

pub fn validate_rewards(rewards: &RewardBundle, t: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    for (field, span) in [
        ("span_coarse", rewards.span_coarse),
        ("span_fine", rewards.span_fine),
        ("span_adaptive", rewards.span_adaptive),
    ] {
        if span.start > span.end || span.end > t {
            out.push(Violation::new(field, format!("{span} not within [0, {t}]")));
        }
    }
    let whole = Span::new(0, t);
    if rewards.span_coarse != whole {
        out.push(Violation::new("span_coarse", "coarse span must be [0, T)"));
    }
    if rewards.span_adaptive != whole {
        out.push(Violation::new("span_adaptive", "adaptive span must be [0, T)"));
    }
    if !(-1.0..=1.0).contains(&rewards.r_coarse) {
        out.push(Violation::new("r_coarse", "r_coarse outside [-1, 1]"));
    }
    if !(-0.3..=1.0).contains(&rewards.r_adaptive) {
        out.push(Violation::new("r_adaptive", "r_adaptive outside [-0.3, 1]"));
    }
    if !rewards.span_fine.is_empty()
        && rewards.fine_weight != t as f64 / rewards.span_fine.len() as f64
    {
        out.push(Violation::new("fine_weight", "fine_weight must equal T / (E - S)"));
    }
    out
}

/// Checks an entry before it enters the online buffer.
pub fn validate_entry(entry: &BufferEntry) -> Vec<Violation> {
    let mut out = Vec::new();
    if entry.problem_id.is_empty() {
        out.push(Violation::new("problem_id", "problem_id must be non-empty"));
    }
    out.extend(validate_candidate(&entry.candidate));
    if entry.candidate.logprobs.is_none() {
        out.push(Violation::new("logprobs", "buffer entries require logprobs"));
    }
    let n = entry.feedback.n_pass + entry.feedback.n_fail;
    out.extend(validate_feedback(&entry.feedback, n));
    out.extend(validate_rewards(&entry.rewards, entry.candidate.len()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(n_tests: usize) -> Problem {
        Problem {
            id: "p".into(),
            description: String::new(),
            tests: (0..n_tests).map(|i| TestCase::new(i.to_string(), i.to_string())).collect(),
            ground_truth: None,
            max_tokens: 16,
        }
    }

    #[test]
    fn well_formed_pair_has_no_violations() {
        let c = CandidateProgram::from_source("print(input())\n");
        assert!(validate(&problem(3), &c).is_empty());
    }

    #[test]
    fn logprob_length_mismatch_is_reported() {
        let c = CandidateProgram::from_source("a b c");
        assert_eq!(c.len(), 5);
        let c = c.with_logprobs(vec![-0.1; 4]);
        let v = validate_candidate(&c);
        assert_eq!(v.len(), 1);
        assert!(v[0].rule.starts_with("logprobs length mismatch"));
        assert_eq!(v[0].field, "logprobs");
    }

    #[test]
    fn positive_logprob_is_rejected() {
        let c = CandidateProgram::from_source("a").with_logprobs(vec![0.5]);
        assert_eq!(validate_candidate(&c)[0].rule, "every logprob must be <= 0");
    }

    #[test]
    fn error_without_sub_error_is_reported() {
        let fb = Feedback {
            verdict: Verdict::Error,
            sub_error: None,
            category: Some(Category::Whole),
            error_line: None,
            n_pass: 0,
            n_fail: 1,
        };
        let v = validate_feedback(&fb, 1);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, "Error requires sub_error");
    }

    #[test]
    fn broken_spans_are_reported() {
        let mut c = CandidateProgram::from_source("ab cd");
        c.token_char_spans[1] = Span::new(3, 3);
        assert!(!validate_candidate(&c).is_empty());
        let mut c = CandidateProgram::from_source("ab cd");
        c.source.push('x');
        assert_eq!(
            validate_candidate(&c)[0].rule,
            "spans do not cover the whole source"
        );
    }

    #[test]
    fn problem_invariants() {
        let mut p = problem(0);
        p.id.clear();
        p.max_tokens = 0;
        assert_eq!(validate_problem(&p).len(), 3);
    }

    #[test]
    fn line_ranges_include_newline() {
        let c = CandidateProgram::from_source("x= 1\nf(y)");
        assert_eq!(c.line_count(), 2);
        assert_eq!(c.line_byte_range(1), Some(Span::new(0, 5)));
        assert_eq!(c.line_byte_range(2), Some(Span::new(5, 9)));
        assert_eq!(c.line_byte_range(3), None);
        let c = CandidateProgram::from_source("a\n");
        assert_eq!(c.line_count(), 1);
        assert_eq!(c.line_byte_range(2), None);
    }

    #[test]
    fn whitespace_normalized_comparison() {
        let t = TestCase::new("", "1 2\n3");
        assert!(t.accepts("1  2 3\n\n"));
        assert!(!t.accepts("1 23"));
        let exact = TestCase {
            comparison: Comparison::Exact,
            ..TestCase::new("", "7\n")
        };
        assert!(exact.accepts("7\n"));
        assert!(!exact.accepts("7"));
    }

    #[test]
    fn category_accepts_global_alias() {
        let c: Category = serde_json::from_str("\"U_global\"").unwrap();
        assert_eq!(c, Category::Whole);
        assert_eq!(serde_json::to_string(&c).unwrap(), "\"U_whole\"");
    }

    #[test]
    fn exception_names_fold_into_rows() {
        assert_eq!(SubError::from_exception_name("ModuleNotFoundError"), SubError::ImportError);
        assert_eq!(SubError::from_exception_name("TabError"), SubError::IndentationError);
        assert_eq!(SubError::from_exception_name("AttributeError"), SubError::Else);
        for kind in SubError::ALL {
            if kind != SubError::Else {
                assert_eq!(SubError::from_exception_name(kind.as_str()), kind);
            }
        }
    }
}
