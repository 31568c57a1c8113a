use super::lexer::{Tok, TokKind};
use super::CompileError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    FloorDiv,
    Mod,
    Pow,
    BitAnd,
    BitOr,
    BitXor,
    Shl,
    Shr,
    MatMul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
    Ne,
    In,
    NotIn,
    Is,
    IsNot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Pos,
    Invert,
    Not,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Arg {
    Pos(Expr),
    Star(Expr),
    Keyword(String, Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comprehension {
    pub target: Expr,
    pub iter: Expr,
    pub conds: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Name(String),
    Int(i64),
    Str(String),
    Bool(bool),
    None,
    Tuple(Vec<Expr>),
    List(Vec<Expr>),
    Dict(Vec<(Expr, Expr)>),
    ListComp(Box<Expr>, Box<Comprehension>),
    BinOp(Box<Expr>, BinOp, Box<Expr>),
    Unary(UnaryOp, Box<Expr>),
    BoolOp(bool, Box<Expr>, Box<Expr>),
    Compare(Box<Expr>, Vec<(CmpOp, Expr)>),
    IfExp(Box<Expr>, Box<Expr>, Box<Expr>),
    Call(Box<Expr>, Vec<Arg>),
    Attr(Box<Expr>, String),
    Index(Box<Expr>, Box<Expr>),
    Slice(Box<Expr>, Option<Box<Expr>>, Option<Box<Expr>>, Option<Box<Expr>>),
    Starred(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Expr(Expr),
    Assign(Vec<Expr>, Expr),
    AugAssign(Expr, BinOp, Expr),
    If(Vec<(Expr, Vec<Stmt>)>, Vec<Stmt>),
    While(Expr, Vec<Stmt>),
    For(Expr, Expr, Vec<Stmt>),
    Pass,
    Break,
    Continue,
    /// A construct outside the toy subset; raises when executed.
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub line: usize,
}

const MAX_DEPTH: usize = 100;

const UNSUPPORTED_KEYWORDS: &[&str] = &[
    "def", "class", "return", "import", "from", "try", "except", "finally", "with", "lambda",
    "del", "global", "nonlocal", "assert", "raise", "yield", "async", "await",
];

const KEYWORDS: &[&str] = &[
    "if", "elif", "else", "while", "for", "in", "not", "and", "or", "is", "pass", "break",
    "continue", "True", "False", "None",
];

pub fn parse(tokens: Vec<Tok>) -> Result<Vec<Stmt>, CompileError> {
    let mut p = Parser {
        toks: tokens,
        pos: 0,
        depth: 0,
        loop_depth: 0,
    };
    let mut body = Vec::new();
    loop {
        match p.kind() {
            TokKind::End => break,
            TokKind::Newline => p.pos += 1,
            _ => body.extend(p.statement()?),
        }
    }
    Ok(body)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
    depth: usize,
    loop_depth: usize,
}

impl Parser {
    fn kind(&self) -> &TokKind {
        &self.toks[self.pos.min(self.toks.len() - 1)].kind
    }

    fn line(&self) -> usize {
        self.toks[self.pos.min(self.toks.len() - 1)].line
    }

    fn advance(&mut self) -> Tok {
        let t = self.toks[self.pos.min(self.toks.len() - 1)].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn is_op(&self, op: &str) -> bool {
        matches!(self.kind(), TokKind::Op(o) if *o == op)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.kind(), TokKind::Name(n) if n == kw)
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.is_op(op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn invalid(&self) -> CompileError {
        match self.kind() {
            TokKind::Indent => CompileError::indentation("unexpected indent", self.line()),
            TokKind::End => CompileError::syntax("unexpected EOF while parsing", self.line()),
            _ => CompileError::syntax("invalid syntax", self.line()),
        }
    }

    fn expect_op(&mut self, op: &str) -> Result<(), CompileError> {
        if self.eat_op(op) {
            Ok(())
        } else {
            Err(self.invalid())
        }
    }

    fn enter(&mut self) -> Result<(), CompileError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(CompileError::syntax("too many nested expressions", self.line()));
        }
        Ok(())
    }

    fn statement(&mut self) -> Result<Vec<Stmt>, CompileError> {
        let line = self.line();
        if let TokKind::Name(n) = self.kind() {
            match n.as_str() {
                "if" => return Ok(vec![self.if_stmt()?]),
                "while" => {
                    self.pos += 1;
                    let cond = self.named_expr()?;
                    self.loop_depth += 1;
                    let body = self.block("while", line);
                    self.loop_depth -= 1;
                    let body = body?;
                    if self.is_kw("else") {
                        return Err(CompileError::unsupported("while-else", self.line()));
                    }
                    return Ok(vec![Stmt {
                        kind: StmtKind::While(cond, body),
                        line,
                    }]);
                }
                "for" => {
                    self.pos += 1;
                    let target = self.target_list()?;
                    if !self.eat_kw("in") {
                        return Err(self.invalid());
                    }
                    let iter = self.expr_list()?;
                    self.loop_depth += 1;
                    let body = self.block("for", line);
                    self.loop_depth -= 1;
                    let body = body?;
                    if self.is_kw("else") {
                        return Err(CompileError::unsupported("for-else", self.line()));
                    }
                    return Ok(vec![Stmt {
                        kind: StmtKind::For(target, iter, body),
                        line,
                    }]);
                }
                "elif" | "else" => return Err(self.invalid()),
                kw if UNSUPPORTED_KEYWORDS.contains(&kw) => {
                    let kw = kw.to_string();
                    self.skip_unsupported();
                    return Ok(vec![Stmt {
                        kind: StmtKind::Unsupported(kw),
                        line,
                    }]);
                }
                _ => {}
            }
        }
        if matches!(self.kind(), TokKind::Indent) {
            return Err(CompileError::indentation("unexpected indent", line));
        }
        if matches!(self.kind(), TokKind::Dedent) {
            return Err(self.invalid());
        }
        self.simple_line()
    }

    /// Skips an unsupported statement and any block it opens.
    fn skip_unsupported(&mut self) {
        let mut opens_block = false;
        while !matches!(self.kind(), TokKind::Newline | TokKind::End) {
            opens_block = self.is_op(":");
            self.pos += 1;
        }
        self.eat_newline();
        if opens_block && matches!(self.kind(), TokKind::Indent) {
            let mut depth = 0;
            loop {
                match self.kind() {
                    TokKind::Indent => depth += 1,
                    TokKind::Dedent => {
                        depth -= 1;
                        if depth == 0 {
                            self.pos += 1;
                            break;
                        }
                    }
                    TokKind::End => break,
                    _ => {}
                }
                self.pos += 1;
            }
        }
    }

    fn eat_newline(&mut self) {
        if matches!(self.kind(), TokKind::Newline) {
            self.pos += 1;
        }
    }

    fn if_stmt(&mut self) -> Result<Stmt, CompileError> {
        let line = self.line();
        self.pos += 1;
        let mut branches = Vec::new();
        let cond = self.named_expr()?;
        branches.push((cond, self.block("if", line)?));
        let mut orelse = Vec::new();
        loop {
            if self.is_kw("elif") {
                let l = self.line();
                self.pos += 1;
                let cond = self.named_expr()?;
                branches.push((cond, self.block("elif", l)?));
            } else if self.is_kw("else") {
                let l = self.line();
                self.pos += 1;
                orelse = self.block("else", l)?;
                break;
            } else {
                break;
            }
        }
        Ok(Stmt {
            kind: StmtKind::If(branches, orelse),
            line,
        })
    }

    fn block(&mut self, what: &str, header_line: usize) -> Result<Vec<Stmt>, CompileError> {
        self.expect_op(":")?;
        if !matches!(self.kind(), TokKind::Newline) {
            return self.simple_line();
        }
        self.pos += 1;
        if !matches!(self.kind(), TokKind::Indent) {
            let at = match self.kind() {
                TokKind::End => self.line() + 1,
                _ => self.line(),
            };
            return Err(CompileError::indentation(
                format!("expected an indented block after '{what}' statement on line {header_line}"),
                at,
            ));
        }
        self.pos += 1;
        let mut body = Vec::new();
        loop {
            match self.kind() {
                TokKind::Dedent => {
                    self.pos += 1;
                    break;
                }
                TokKind::End => break,
                TokKind::Newline => self.pos += 1,
                _ => body.extend(self.statement()?),
            }
        }
        Ok(body)
    }

    fn simple_line(&mut self) -> Result<Vec<Stmt>, CompileError> {
        let mut out = vec![self.simple()?];
        while self.eat_op(";") {
            if matches!(self.kind(), TokKind::Newline | TokKind::End) {
                break;
            }
            out.push(self.simple()?);
        }
        match self.kind() {
            TokKind::Newline => {
                self.pos += 1;
                Ok(out)
            }
            TokKind::End => Ok(out),
            _ => Err(self.invalid()),
        }
    }

    fn simple(&mut self) -> Result<Stmt, CompileError> {
        let line = self.line();
        if self.eat_kw("pass") {
            return Ok(Stmt {
                kind: StmtKind::Pass,
                line,
            });
        }
        if self.is_kw("break") || self.is_kw("continue") {
            let brk = self.is_kw("break");
            if self.loop_depth == 0 {
                let msg = if brk { "'break' outside loop" } else { "'continue' not properly in loop" };
                return Err(CompileError::syntax(msg, line));
            }
            self.pos += 1;
            return Ok(Stmt {
                kind: if brk { StmtKind::Break } else { StmtKind::Continue },
                line,
            });
        }
        let first = self.star_expr_list()?;
        if let Some(op) = self.aug_op() {
            self.pos += 1;
            check_target(&first, false)?;
            if matches!(first.kind, ExprKind::Tuple(_) | ExprKind::List(_)) {
                return Err(CompileError::syntax(
                    "'tuple' is an illegal expression for augmented assignment",
                    line,
                ));
            }
            let value = self.expr_list()?;
            return Ok(Stmt {
                kind: StmtKind::AugAssign(first, op, value),
                line,
            });
        }
        if self.is_op("=") {
            let mut targets = vec![first];
            let mut value;
            loop {
                self.pos += 1;
                value = self.star_expr_list()?;
                if !self.is_op("=") {
                    break;
                }
                targets.push(value);
            }
            for t in &targets {
                check_target(t, true)?;
            }
            return Ok(Stmt {
                kind: StmtKind::Assign(targets, value),
                line,
            });
        }
        if let ExprKind::Starred(_) = first.kind {
            return Err(CompileError::syntax("can't use starred expression here", line));
        }
        Ok(Stmt {
            kind: StmtKind::Expr(first),
            line,
        })
    }

    fn aug_op(&self) -> Option<BinOp> {
        let TokKind::Op(o) = self.kind() else {
            return None;
        };
        Some(match *o {
            "+=" => BinOp::Add,
            "-=" => BinOp::Sub,
            "*=" => BinOp::Mul,
            "/=" => BinOp::Div,
            "//=" => BinOp::FloorDiv,
            "%=" => BinOp::Mod,
            "**=" => BinOp::Pow,
            "&=" => BinOp::BitAnd,
            "|=" => BinOp::BitOr,
            "^=" => BinOp::BitXor,
            "<<=" => BinOp::Shl,
            ">>=" => BinOp::Shr,
            _ => return None,
        })
    }

    fn target_list(&mut self) -> Result<Expr, CompileError> {
        let line = self.line();
        let first = self.star_or(|p| p.bitor())?;
        let t = if self.is_op(",") {
            let mut items = vec![first];
            while self.eat_op(",") {
                if self.is_kw("in") {
                    break;
                }
                items.push(self.star_or(|p| p.bitor())?);
            }
            Expr {
                kind: ExprKind::Tuple(items),
                line,
            }
        } else {
            first
        };
        check_target(&t, true)?;
        Ok(t)
    }

    fn star_or(&mut self, f: impl Fn(&mut Self) -> Result<Expr, CompileError>) -> Result<Expr, CompileError> {
        let line = self.line();
        if self.eat_op("*") {
            let inner = f(self)?;
            return Ok(Expr {
                kind: ExprKind::Starred(Box::new(inner)),
                line,
            });
        }
        f(self)
    }

    /// Comma-separated expressions; a trailing or inner comma makes a tuple.
    fn star_expr_list(&mut self) -> Result<Expr, CompileError> {
        let line = self.line();
        let first = self.star_or(|p| p.expr())?;
        if !self.is_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.ends_expr_list() {
                break;
            }
            items.push(self.star_or(|p| p.expr())?);
        }
        Ok(Expr {
            kind: ExprKind::Tuple(items),
            line,
        })
    }

    fn expr_list(&mut self) -> Result<Expr, CompileError> {
        self.star_expr_list()
    }

    fn ends_expr_list(&self) -> bool {
        match self.kind() {
            TokKind::Newline | TokKind::End => true,
            TokKind::Op(o) => matches!(*o, "=" | ")" | "]" | "}" | ":" | ";")
                || self.aug_op().is_some(),
            _ => false,
        }
    }

    fn named_expr(&mut self) -> Result<Expr, CompileError> {
        let e = self.expr()?;
        if self.is_op(":=") {
            return Err(CompileError::unsupported("assignment expressions", self.line()));
        }
        Ok(e)
    }

    fn expr(&mut self) -> Result<Expr, CompileError> {
        self.enter()?;
        let line = self.line();
        let body = self.or_test()?;
        let out = if self.eat_kw("if") {
            let cond = self.or_test()?;
            if !self.eat_kw("else") {
                return Err(self.invalid());
            }
            let other = self.expr()?;
            Expr {
                kind: ExprKind::IfExp(Box::new(cond), Box::new(body), Box::new(other)),
                line,
            }
        } else {
            body
        };
        self.depth -= 1;
        Ok(out)
    }

    fn or_test(&mut self) -> Result<Expr, CompileError> {
        let mut left = self.and_test()?;
        while self.is_kw("or") {
            let line = self.line();
            self.pos += 1;
            let right = self.and_test()?;
            left = Expr {
                kind: ExprKind::BoolOp(false, Box::new(left), Box::new(right)),
                line,
            };
        }
        Ok(left)
    }

    fn and_test(&mut self) -> Result<Expr, CompileError> {
        let mut left = self.not_test()?;
        while self.is_kw("and") {
            let line = self.line();
            self.pos += 1;
            let right = self.not_test()?;
            left = Expr {
                kind: ExprKind::BoolOp(true, Box::new(left), Box::new(right)),
                line,
            };
        }
        Ok(left)
    }

    fn not_test(&mut self) -> Result<Expr, CompileError> {
        if self.is_kw("not") {
            let line = self.line();
            self.pos += 1;
            self.enter()?;
            let inner = self.not_test()?;
            self.depth -= 1;
            return Ok(Expr {
                kind: ExprKind::Unary(UnaryOp::Not, Box::new(inner)),
                line,
            });
        }
        self.comparison()
    }

    fn cmp_op(&mut self) -> Option<CmpOp> {
        let op = match self.kind() {
            TokKind::Op("<") => CmpOp::Lt,
            TokKind::Op(">") => CmpOp::Gt,
            TokKind::Op("<=") => CmpOp::Le,
            TokKind::Op(">=") => CmpOp::Ge,
            TokKind::Op("==") => CmpOp::Eq,
            TokKind::Op("!=") => CmpOp::Ne,
            TokKind::Name(n) if n == "in" => CmpOp::In,
            TokKind::Name(n) if n == "is" => {
                self.pos += 1;
                return Some(if self.eat_kw("not") { CmpOp::IsNot } else { CmpOp::Is });
            }
            TokKind::Name(n) if n == "not" => {
                let next = &self.toks[(self.pos + 1).min(self.toks.len() - 1)].kind;
                if matches!(next, TokKind::Name(m) if m == "in") {
                    self.pos += 2;
                    return Some(CmpOp::NotIn);
                }
                return None;
            }
            _ => return None,
        };
        self.pos += 1;
        Some(op)
    }

    fn comparison(&mut self) -> Result<Expr, CompileError> {
        let line = self.line();
        let left = self.bitor()?;
        let mut rest = Vec::new();
        while let Some(op) = self.cmp_op() {
            rest.push((op, self.bitor()?));
        }
        if rest.is_empty() {
            return Ok(left);
        }
        Ok(Expr {
            kind: ExprKind::Compare(Box::new(left), rest),
            line,
        })
    }

    fn binary_level(
        &mut self,
        ops: &[(&str, BinOp)],
        next: fn(&mut Self) -> Result<Expr, CompileError>,
    ) -> Result<Expr, CompileError> {
        let mut left = next(self)?;
        'outer: loop {
            for (sym, op) in ops {
                if self.is_op(sym) {
                    let line = self.line();
                    self.pos += 1;
                    let right = next(self)?;
                    left = Expr {
                        kind: ExprKind::BinOp(Box::new(left), *op, Box::new(right)),
                        line,
                    };
                    continue 'outer;
                }
            }
            return Ok(left);
        }
    }

    fn bitor(&mut self) -> Result<Expr, CompileError> {
        self.binary_level(&[("|", BinOp::BitOr)], Self::bitxor)
    }

    fn bitxor(&mut self) -> Result<Expr, CompileError> {
        self.binary_level(&[("^", BinOp::BitXor)], Self::bitand)
    }

    fn bitand(&mut self) -> Result<Expr, CompileError> {
        self.binary_level(&[("&", BinOp::BitAnd)], Self::shift)
    }

    fn shift(&mut self) -> Result<Expr, CompileError> {
        self.binary_level(&[("<<", BinOp::Shl), (">>", BinOp::Shr)], Self::arith)
    }

    fn arith(&mut self) -> Result<Expr, CompileError> {
        self.binary_level(&[("+", BinOp::Add), ("-", BinOp::Sub)], Self::term)
    }

    fn term(&mut self) -> Result<Expr, CompileError> {
        self.binary_level(
            &[
                ("*", BinOp::Mul),
                ("/", BinOp::Div),
                ("//", BinOp::FloorDiv),
                ("%", BinOp::Mod),
                ("@", BinOp::MatMul),
            ],
            Self::factor,
        )
    }

    fn factor(&mut self) -> Result<Expr, CompileError> {
        let line = self.line();
        let op = match self.kind() {
            TokKind::Op("-") => Some(UnaryOp::Neg),
            TokKind::Op("+") => Some(UnaryOp::Pos),
            TokKind::Op("~") => Some(UnaryOp::Invert),
            _ => None,
        };
        if let Some(op) = op {
            self.pos += 1;
            self.enter()?;
            let inner = self.factor()?;
            self.depth -= 1;
            return Ok(Expr {
                kind: ExprKind::Unary(op, Box::new(inner)),
                line,
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, CompileError> {
        let base = self.primary()?;
        if self.is_op("**") {
            let line = self.line();
            self.pos += 1;
            self.enter()?;
            let exp = self.factor()?;
            self.depth -= 1;
            return Ok(Expr {
                kind: ExprKind::BinOp(Box::new(base), BinOp::Pow, Box::new(exp)),
                line,
            });
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, CompileError> {
        let mut e = self.atom()?;
        loop {
            let line = self.line();
            if self.eat_op("(") {
                let args = self.call_args()?;
                e = Expr {
                    kind: ExprKind::Call(Box::new(e), args),
                    line,
                };
            } else if self.eat_op("[") {
                let idx = self.subscript()?;
                self.expect_op("]")?;
                e = Expr {
                    kind: ExprKind::Index(Box::new(e), Box::new(idx)),
                    line,
                };
            } else if self.eat_op(".") {
                let TokKind::Name(name) = self.kind().clone() else {
                    return Err(self.invalid());
                };
                if KEYWORDS.contains(&name.as_str()) {
                    return Err(self.invalid());
                }
                self.pos += 1;
                e = Expr {
                    kind: ExprKind::Attr(Box::new(e), name),
                    line,
                };
            } else {
                return Ok(e);
            }
        }
    }

    fn call_args(&mut self) -> Result<Vec<Arg>, CompileError> {
        let mut args = Vec::new();
        let mut seen_kw = false;
        loop {
            if self.eat_op(")") {
                return Ok(args);
            }
            if self.eat_op("*") {
                args.push(Arg::Star(self.expr()?));
            } else if self.is_op("**") {
                return Err(CompileError::unsupported("keyword unpacking", self.line()));
            } else {
                let is_kw = matches!(self.kind(), TokKind::Name(_))
                    && matches!(self.toks.get(self.pos + 1).map(|t| &t.kind), Some(TokKind::Op("=")));
                if is_kw {
                    let TokKind::Name(name) = self.advance().kind else {
                        unreachable!()
                    };
                    self.pos += 1;
                    args.push(Arg::Keyword(name, self.expr()?));
                    seen_kw = true;
                } else {
                    let line = self.line();
                    let e = self.expr()?;
                    if seen_kw {
                        return Err(CompileError::syntax(
                            "positional argument follows keyword argument",
                            line,
                        ));
                    }
                    if self.is_kw("for") {
                        let comp = self.comprehension()?;
                        args.push(Arg::Pos(Expr {
                            kind: ExprKind::ListComp(Box::new(e), Box::new(comp)),
                            line,
                        }));
                    } else {
                        args.push(Arg::Pos(e));
                    }
                }
            }
            if !self.eat_op(",") {
                self.expect_op(")")?;
                return Ok(args);
            }
        }
    }

    fn comprehension(&mut self) -> Result<Comprehension, CompileError> {
        if !self.eat_kw("for") {
            return Err(self.invalid());
        }
        let target = self.target_list()?;
        if !self.eat_kw("in") {
            return Err(self.invalid());
        }
        let iter = self.or_test()?;
        let mut conds = Vec::new();
        while self.eat_kw("if") {
            conds.push(self.or_test()?);
        }
        if self.is_kw("for") {
            return Err(CompileError::unsupported("nested comprehensions", self.line()));
        }
        Ok(Comprehension {
            target,
            iter,
            conds,
        })
    }

    fn subscript(&mut self) -> Result<Expr, CompileError> {
        let line = self.line();
        let lower = if self.is_op(":") { None } else { Some(Box::new(self.expr()?)) };
        if !self.eat_op(":") {
            return lower.map(|b| *b).ok_or_else(|| self.invalid());
        }
        let stop_here = |p: &Self| p.is_op("]") || p.is_op(":");
        let upper = if stop_here(self) { None } else { Some(Box::new(self.expr()?)) };
        let step = if self.eat_op(":") {
            if self.is_op("]") {
                None
            } else {
                Some(Box::new(self.expr()?))
            }
        } else {
            None
        };
        Ok(Expr {
            kind: ExprKind::Slice(
                Box::new(Expr {
                    kind: ExprKind::None,
                    line,
                }),
                lower,
                upper,
                step,
            ),
            line,
        })
    }

    fn atom(&mut self) -> Result<Expr, CompileError> {
        let line = self.line();
        let tok = self.kind().clone();
        let kind = match tok {
            TokKind::Int(v) => {
                self.pos += 1;
                ExprKind::Int(v)
            }
            TokKind::Str(s) => {
                self.pos += 1;
                let mut s = s;
                while let TokKind::Str(more) = self.kind() {
                    s.push_str(more);
                    self.pos += 1;
                }
                ExprKind::Str(s)
            }
            TokKind::Name(n) => {
                let kind = match n.as_str() {
                    "True" => ExprKind::Bool(true),
                    "False" => ExprKind::Bool(false),
                    "None" => ExprKind::None,
                    kw if KEYWORDS.contains(&kw) || UNSUPPORTED_KEYWORDS.contains(&kw) => {
                        return Err(self.invalid())
                    }
                    _ => ExprKind::Name(n),
                };
                self.pos += 1;
                kind
            }
            TokKind::Op("(") => {
                self.pos += 1;
                self.enter()?;
                let out = if self.eat_op(")") {
                    ExprKind::Tuple(Vec::new())
                } else {
                    let first = self.star_or(|p| p.expr())?;
                    if self.is_kw("for") {
                        let comp = self.comprehension()?;
                        self.expect_op(")")?;
                        ExprKind::ListComp(Box::new(first), Box::new(comp))
                    } else if self.eat_op(")") {
                        if let ExprKind::Starred(_) = first.kind {
                            return Err(CompileError::syntax("cannot use starred expression here", line));
                        }
                        self.depth -= 1;
                        return Ok(first);
                    } else {
                        let mut items = vec![first];
                        while self.eat_op(",") {
                            if self.is_op(")") {
                                break;
                            }
                            items.push(self.star_or(|p| p.expr())?);
                        }
                        self.expect_op(")")?;
                        ExprKind::Tuple(items)
                    }
                };
                self.depth -= 1;
                out
            }
            TokKind::Op("[") => {
                self.pos += 1;
                self.enter()?;
                let out = if self.eat_op("]") {
                    ExprKind::List(Vec::new())
                } else {
                    let first = self.star_or(|p| p.expr())?;
                    if self.is_kw("for") {
                        let comp = self.comprehension()?;
                        self.expect_op("]")?;
                        ExprKind::ListComp(Box::new(first), Box::new(comp))
                    } else {
                        let mut items = vec![first];
                        while self.eat_op(",") {
                            if self.is_op("]") {
                                break;
                            }
                            items.push(self.star_or(|p| p.expr())?);
                        }
                        self.expect_op("]")?;
                        ExprKind::List(items)
                    }
                };
                self.depth -= 1;
                out
            }
            TokKind::Op("{") => {
                self.pos += 1;
                self.enter()?;
                let mut items = Vec::new();
                while !self.eat_op("}") {
                    let k = self.expr()?;
                    if !self.eat_op(":") {
                        return Err(CompileError::unsupported("set displays", line));
                    }
                    let v = self.expr()?;
                    items.push((k, v));
                    if !self.eat_op(",") {
                        self.expect_op("}")?;
                        break;
                    }
                }
                self.depth -= 1;
                ExprKind::Dict(items)
            }
            _ => return Err(self.invalid()),
        };
        Ok(Expr { kind, line })
    }
}

fn check_target(e: &Expr, allow_tuple: bool) -> Result<(), CompileError> {
    match &e.kind {
        ExprKind::Name(_) | ExprKind::Index(..) | ExprKind::Attr(..) => Ok(()),
        ExprKind::Starred(inner) if allow_tuple => check_target(inner, false),
        ExprKind::Tuple(items) | ExprKind::List(items) if allow_tuple => {
            if items.iter().filter(|i| matches!(i.kind, ExprKind::Starred(_))).count() > 1 {
                return Err(CompileError::syntax("multiple starred expressions in assignment", e.line));
            }
            items.iter().try_for_each(|i| check_target(i, true))
        }
        ExprKind::Int(_) | ExprKind::Str(_) | ExprKind::Bool(_) | ExprKind::None => {
            Err(CompileError::syntax("cannot assign to literal", e.line))
        }
        ExprKind::Call(..) => Err(CompileError::syntax("cannot assign to function call", e.line)),
        _ => Err(CompileError::syntax("cannot assign to expression", e.line)),
    }
}
