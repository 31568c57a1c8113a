use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::HashMap;
use std::rc::Rc;

use super::parser::{Arg, BinOp, CmpOp, Comprehension, Expr, ExprKind, Stmt, StmtKind, UnaryOp};
use super::value::{range_len, Builtin, Cursor, IterObj, Value};
use super::{ToyOutcome, ToyRun};
use crate::sandbox::StructuredError;

pub const DEFAULT_STEP_BUDGET: u64 = 200_000;
const MAX_STDOUT: usize = 1 << 16;
const MAX_ITEMS: usize = 1 << 20;

struct Exc {
    name: &'static str,
    message: String,
    line: Option<usize>,
}

enum Signal {
    Raise(Exc),
    Timeout,
}

impl Signal {
    fn at(self, line: usize) -> Signal {
        match self {
            Signal::Raise(mut e) if e.line.is_none() => {
                e.line = Some(line);
                Signal::Raise(e)
            }
            other => other,
        }
    }
}

type R<T> = Result<T, Signal>;

fn raise<T>(name: &'static str, message: impl Into<String>) -> R<T> {
    Err(Signal::Raise(Exc {
        name,
        message: message.into(),
        line: None,
    }))
}

fn type_error<T>(message: impl Into<String>) -> R<T> {
    raise("TypeError", message)
}

fn overflow<T>() -> R<T> {
    raise("OverflowError", "integer result exceeds 64 bits")
}

enum Flow {
    Normal,
    Break,
    Continue,
}

const STR_METHODS: &[&str] = &[
    "split", "strip", "lstrip", "rstrip", "upper", "lower", "join", "count", "replace", "isdigit",
    "isalpha", "startswith", "endswith", "find", "index",
];
const LIST_METHODS: &[&str] = &[
    "append", "pop", "sort", "reverse", "count", "index", "insert", "extend", "remove", "copy",
    "clear",
];
const TUPLE_METHODS: &[&str] = &["count", "index"];
const DICT_METHODS: &[&str] = &["get", "keys", "values", "items", "pop"];

pub fn execute(program: &[Stmt], input: &str, step_budget: u64) -> ToyRun {
    let mut it = Interp {
        vars: HashMap::new(),
        input,
        input_pos: 0,
        stdout: String::new(),
        steps: 0,
        budget: step_budget,
    };
    let outcome = match it.exec_block(program) {
        Ok(_) => ToyOutcome::Ok,
        Err(Signal::Timeout) => ToyOutcome::Timeout,
        Err(Signal::Raise(e)) => ToyOutcome::Raised(StructuredError::new(e.name, e.message, e.line)),
    };
    ToyRun {
        stdout: it.stdout,
        outcome,
    }
}

struct Interp<'a> {
    vars: HashMap<String, Value>,
    input: &'a str,
    input_pos: usize,
    stdout: String,
    steps: u64,
    budget: u64,
}

impl Interp<'_> {
    fn step(&mut self, n: u64) -> R<()> {
        self.steps = self.steps.saturating_add(n);
        if self.steps > self.budget {
            return Err(Signal::Timeout);
        }
        Ok(())
    }

    fn write(&mut self, s: &str) {
        let room = MAX_STDOUT.saturating_sub(self.stdout.len());
        if s.len() <= room {
            self.stdout.push_str(s);
        } else {
            let mut cut = room;
            while !s.is_char_boundary(cut) {
                cut -= 1;
            }
            self.stdout.push_str(&s[..cut]);
        }
    }

    fn read_line(&mut self) -> R<String> {
        if self.input_pos >= self.input.len() {
            return raise("EOFError", "EOF when reading a line");
        }
        let rest = &self.input[self.input_pos..];
        let (line, used) = match rest.find('\n') {
            Some(i) => (&rest[..i], i + 1),
            None => (rest, rest.len()),
        };
        self.input_pos += used;
        Ok(line.strip_suffix('\r').unwrap_or(line).to_string())
    }

    fn exec_block(&mut self, stmts: &[Stmt]) -> R<Flow> {
        for s in stmts {
            match self.exec(s).map_err(|e| e.at(s.line))? {
                Flow::Normal => {}
                other => return Ok(other),
            }
        }
        Ok(Flow::Normal)
    }

    fn exec(&mut self, stmt: &Stmt) -> R<Flow> {
        self.step(1)?;
        match &stmt.kind {
            StmtKind::Expr(e) => {
                self.eval(e)?;
            }
            StmtKind::Assign(targets, value) => {
                let v = self.eval(value)?;
                for t in targets {
                    self.assign(t, v.clone())?;
                }
            }
            StmtKind::AugAssign(target, op, value) => self.aug_assign(target, *op, value)?,
            StmtKind::If(branches, orelse) => {
                for (cond, body) in branches {
                    if self.eval(cond)?.truthy() {
                        return self.exec_block(body);
                    }
                }
                return self.exec_block(orelse);
            }
            StmtKind::While(cond, body) => loop {
                self.step(1)?;
                if !self.eval(cond)?.truthy() {
                    break;
                }
                if let Flow::Break = self.exec_block(body)? {
                    break;
                }
            },
            StmtKind::For(target, iter, body) => {
                let v = self.eval(iter)?;
                let mut cur = self.cursor(&v)?;
                loop {
                    self.step(1)?;
                    let Some(item) = self.next(&mut cur)? else {
                        break;
                    };
                    self.assign(target, item).map_err(|e| e.at(target.line))?;
                    if let Flow::Break = self.exec_block(body)? {
                        break;
                    }
                }
            }
            StmtKind::Pass => {}
            StmtKind::Break => return Ok(Flow::Break),
            StmtKind::Continue => return Ok(Flow::Continue),
            StmtKind::Unsupported(kw) => {
                return raise("NotImplementedError", format!("'{kw}' statements are not supported"))
            }
        }
        Ok(Flow::Normal)
    }

    fn assign(&mut self, target: &Expr, v: Value) -> R<()> {
        match &target.kind {
            ExprKind::Name(n) => {
                self.vars.insert(n.clone(), v);
                Ok(())
            }
            ExprKind::Tuple(items) | ExprKind::List(items) => self.unpack(items, v),
            ExprKind::Index(obj, idx) => {
                let container = self.eval(obj)?;
                if let ExprKind::Slice(..) = idx.kind {
                    return raise("NotImplementedError", "slice assignment is not supported");
                }
                let key = self.eval(idx)?;
                self.set_item(&container, key, v)
            }
            ExprKind::Attr(obj, name) => {
                let o = self.eval(obj)?;
                raise(
                    "AttributeError",
                    format!("'{}' object has no attribute '{name}'", o.type_name()),
                )
            }
            _ => raise("SyntaxError", "cannot assign to expression"),
        }
    }

    fn unpack(&mut self, targets: &[Expr], v: Value) -> R<()> {
        let values = self.collect(&v)?;
        let star = targets.iter().position(|t| matches!(t.kind, ExprKind::Starred(_)));
        match star {
            None => {
                if values.len() < targets.len() {
                    return raise(
                        "ValueError",
                        format!(
                            "not enough values to unpack (expected {}, got {})",
                            targets.len(),
                            values.len()
                        ),
                    );
                }
                if values.len() > targets.len() {
                    return raise(
                        "ValueError",
                        format!("too many values to unpack (expected {})", targets.len()),
                    );
                }
                for (t, v) in targets.iter().zip(values) {
                    self.assign(t, v)?;
                }
            }
            Some(si) => {
                let fixed = targets.len() - 1;
                if values.len() < fixed {
                    return raise(
                        "ValueError",
                        format!(
                            "not enough values to unpack (expected at least {fixed}, got {})",
                            values.len()
                        ),
                    );
                }
                let tail = targets.len() - si - 1;
                let mut values = values;
                let after = values.split_off(values.len() - tail);
                let middle = values.split_off(si);
                for (t, v) in targets[..si].iter().zip(values) {
                    self.assign(t, v)?;
                }
                let ExprKind::Starred(inner) = &targets[si].kind else {
                    unreachable!()
                };
                self.assign(inner, Value::list(middle))?;
                for (t, v) in targets[si + 1..].iter().zip(after) {
                    self.assign(t, v)?;
                }
            }
        }
        Ok(())
    }

    fn set_item(&mut self, container: &Value, key: Value, v: Value) -> R<()> {
        match container {
            Value::List(l) => {
                let len = l.borrow().len();
                let Some(i) = key.as_int() else {
                    return type_error(format!(
                        "list indices must be integers or slices, not {}",
                        key.type_name()
                    ));
                };
                let Some(i) = normalize(i, len) else {
                    return raise("IndexError", "list assignment index out of range");
                };
                l.borrow_mut()[i] = v;
                Ok(())
            }
            Value::Dict(d) => {
                check_hashable(&key)?;
                let mut d = d.borrow_mut();
                if let Some(slot) = d.iter_mut().find(|(k, _)| k.py_eq(&key)) {
                    slot.1 = v;
                } else {
                    if d.len() >= MAX_ITEMS {
                        return raise("MemoryError", "");
                    }
                    d.push((key, v));
                }
                Ok(())
            }
            other => type_error(format!(
                "'{}' object does not support item assignment",
                other.type_name()
            )),
        }
    }

    fn aug_assign(&mut self, target: &Expr, op: BinOp, value: &Expr) -> R<()> {
        match &target.kind {
            ExprKind::Name(n) => {
                let cur = self.lookup(n)?;
                let rhs = self.eval(value)?;
                let new = self.inplace(&cur, op, &rhs)?;
                self.vars.insert(n.clone(), new);
                Ok(())
            }
            ExprKind::Index(obj, idx) => {
                if let ExprKind::Slice(..) = idx.kind {
                    return raise("NotImplementedError", "slice assignment is not supported");
                }
                let container = self.eval(obj)?;
                let key = self.eval(idx)?;
                let cur = self.get_item(&container, &key)?;
                let rhs = self.eval(value)?;
                let new = self.inplace(&cur, op, &rhs)?;
                self.set_item(&container, key, new)
            }
            ExprKind::Attr(obj, name) => {
                let o = self.eval(obj)?;
                raise(
                    "AttributeError",
                    format!("'{}' object has no attribute '{name}'", o.type_name()),
                )
            }
            _ => raise("SyntaxError", "illegal expression for augmented assignment"),
        }
    }

    fn inplace(&mut self, cur: &Value, op: BinOp, rhs: &Value) -> R<Value> {
        if let (Value::List(l), BinOp::Add) = (cur, op) {
            let extra = self.collect(rhs)?;
            if l.borrow().len() + extra.len() > MAX_ITEMS {
                return raise("MemoryError", "");
            }
            l.borrow_mut().extend(extra);
            return Ok(cur.clone());
        }
        self.binop(cur, op, rhs)
    }

    fn lookup(&self, name: &str) -> R<Value> {
        if let Some(v) = self.vars.get(name) {
            return Ok(v.clone());
        }
        match Builtin::lookup(name) {
            Some(b) => Ok(Value::Builtin(b)),
            None => raise("NameError", format!("name '{name}' is not defined")),
        }
    }

    fn eval(&mut self, e: &Expr) -> R<Value> {
        self.eval_inner(e).map_err(|s| s.at(e.line))
    }

    fn eval_inner(&mut self, e: &Expr) -> R<Value> {
        Ok(match &e.kind {
            ExprKind::Name(n) => self.lookup(n)?,
            ExprKind::Int(i) => Value::Int(*i),
            ExprKind::Str(s) => Value::str(s.as_str()),
            ExprKind::Bool(b) => Value::Bool(*b),
            ExprKind::None => Value::None,
            ExprKind::Tuple(items) => Value::tuple(self.eval_items(items)?),
            ExprKind::List(items) => Value::list(self.eval_items(items)?),
            ExprKind::Dict(pairs) => {
                let d = Value::Dict(Rc::new(RefCell::new(Vec::new())));
                for (k, v) in pairs {
                    let k = self.eval(k)?;
                    let v = self.eval(v)?;
                    self.set_item(&d, k, v)?;
                }
                d
            }
            ExprKind::ListComp(elt, comp) => self.comprehension(elt, comp)?,
            ExprKind::BinOp(a, op, b) => {
                let a = self.eval(a)?;
                let b = self.eval(b)?;
                self.binop(&a, *op, &b)?
            }
            ExprKind::Unary(op, inner) => {
                let v = self.eval(inner)?;
                match op {
                    UnaryOp::Not => Value::Bool(!v.truthy()),
                    UnaryOp::Neg => match v.as_int() {
                        Some(i) => Value::Int(i.checked_neg().map_or_else(overflow, Ok)?),
                        None => return type_error(format!("bad operand type for unary -: '{}'", v.type_name())),
                    },
                    UnaryOp::Pos => match v.as_int() {
                        Some(i) => Value::Int(i),
                        None => return type_error(format!("bad operand type for unary +: '{}'", v.type_name())),
                    },
                    UnaryOp::Invert => match v.as_int() {
                        Some(i) => Value::Int(!i),
                        None => return type_error(format!("bad operand type for unary ~: '{}'", v.type_name())),
                    },
                }
            }
            ExprKind::BoolOp(is_and, a, b) => {
                let a = self.eval(a)?;
                if a.truthy() == *is_and {
                    self.eval(b)?
                } else {
                    a
                }
            }
            ExprKind::Compare(first, rest) => {
                let mut left = self.eval(first)?;
                for (op, right) in rest {
                    let right = self.eval(right)?;
                    if !self.compare(&left, *op, &right)? {
                        return Ok(Value::Bool(false));
                    }
                    left = right;
                }
                Value::Bool(true)
            }
            ExprKind::IfExp(cond, body, other) => {
                if self.eval(cond)?.truthy() {
                    self.eval(body)?
                } else {
                    self.eval(other)?
                }
            }
            ExprKind::Call(f, args) => {
                let f = self.eval(f)?;
                let mut pos = Vec::new();
                let mut kw = Vec::new();
                for a in args {
                    match a {
                        Arg::Pos(e) => pos.push(self.eval(e)?),
                        Arg::Star(e) => {
                            let v = self.eval(e)?;
                            pos.extend(self.collect(&v)?);
                        }
                        Arg::Keyword(k, e) => {
                            if kw.iter().any(|(n, _): &(String, Value)| n == k) {
                                return raise("SyntaxError", format!("keyword argument repeated: {k}"));
                            }
                            kw.push((k.clone(), self.eval(e)?));
                        }
                    }
                }
                self.call(&f, pos, kw)?
            }
            ExprKind::Attr(obj, name) => {
                let o = self.eval(obj)?;
                let methods: &[&'static str] = match o {
                    Value::Str(_) => STR_METHODS,
                    Value::List(_) => LIST_METHODS,
                    Value::Tuple(_) => TUPLE_METHODS,
                    Value::Dict(_) => DICT_METHODS,
                    _ => &[],
                };
                match methods.iter().find(|m| **m == name) {
                    Some(m) => Value::Method(Box::new(o), m),
                    None => {
                        return raise(
                            "AttributeError",
                            format!("'{}' object has no attribute '{name}'", o.type_name()),
                        )
                    }
                }
            }
            ExprKind::Index(obj, idx) => {
                let o = self.eval(obj)?;
                if let ExprKind::Slice(_, lo, hi, st) = &idx.kind {
                    let lo = self.eval_opt(lo.as_deref())?;
                    let hi = self.eval_opt(hi.as_deref())?;
                    let st = self.eval_opt(st.as_deref())?;
                    self.slice(&o, lo, hi, st)?
                } else {
                    let k = self.eval(idx)?;
                    self.get_item(&o, &k)?
                }
            }
            ExprKind::Slice(..) => return raise("SyntaxError", "invalid syntax"),
            ExprKind::Starred(_) => return raise("SyntaxError", "can't use starred expression here"),
        })
    }

    fn eval_opt(&mut self, e: Option<&Expr>) -> R<Option<Value>> {
        e.map(|e| self.eval(e)).transpose()
    }

    fn eval_items(&mut self, items: &[Expr]) -> R<Vec<Value>> {
        let mut out = Vec::with_capacity(items.len());
        for it in items {
            if let ExprKind::Starred(inner) = &it.kind {
                let v = self.eval(inner)?;
                out.extend(self.collect(&v)?);
            } else {
                out.push(self.eval(it)?);
            }
        }
        Ok(out)
    }

    fn comprehension(&mut self, elt: &Expr, comp: &Comprehension) -> R<Value> {
        let iterable = self.eval(&comp.iter)?;
        let mut names = Vec::new();
        target_names(&comp.target, &mut names);
        let saved: Vec<(String, Option<Value>)> =
            names.iter().map(|n| (n.clone(), self.vars.get(n).cloned())).collect();
        let result = self.comprehension_body(elt, comp, &iterable);
        for (n, v) in saved {
            match v {
                Some(v) => self.vars.insert(n, v),
                None => self.vars.remove(&n),
            };
        }
        result.map(Value::list)
    }

    fn comprehension_body(&mut self, elt: &Expr, comp: &Comprehension, iterable: &Value) -> R<Vec<Value>> {
        let mut cur = self.cursor(iterable)?;
        let mut out = Vec::new();
        'items: while let Some(item) = self.next(&mut cur)? {
            self.step(1)?;
            self.assign(&comp.target, item)?;
            for c in &comp.conds {
                if !self.eval(c)?.truthy() {
                    continue 'items;
                }
            }
            if out.len() >= MAX_ITEMS {
                return raise("MemoryError", "");
            }
            out.push(self.eval(elt)?);
        }
        Ok(out)
    }

    fn cursor(&mut self, v: &Value) -> R<Cursor> {
        Ok(match v {
            Value::Range(a, b, s) => Cursor::Range {
                cur: *a,
                stop: *b,
                step: *s,
            },
            Value::List(l) => Cursor::List(l.clone(), 0),
            Value::Tuple(t) => Cursor::Items(t.clone(), 0),
            Value::Str(s) => Cursor::Items(Rc::new(s.chars().map(|c| Value::str(c.to_string())).collect()), 0),
            Value::Dict(d) => Cursor::Items(Rc::new(d.borrow().iter().map(|(k, _)| k.clone()).collect()), 0),
            Value::Iter(it, _) => Cursor::Iter(it.clone()),
            other => return type_error(format!("'{}' object is not iterable", other.type_name())),
        })
    }

    fn next(&mut self, cur: &mut Cursor) -> R<Option<Value>> {
        match cur {
            Cursor::Range { cur, stop, step } => {
                if (*step > 0 && *cur < *stop) || (*step < 0 && *cur > *stop) {
                    let v = *cur;
                    *cur = cur.checked_add(*step).unwrap_or(*stop);
                    Ok(Some(Value::Int(v)))
                } else {
                    Ok(None)
                }
            }
            Cursor::List(l, i) => {
                let item = l.borrow().get(*i).cloned();
                *i += 1;
                Ok(item)
            }
            Cursor::Items(items, i) => {
                let item = items.get(*i).cloned();
                *i += 1;
                Ok(item)
            }
            Cursor::Iter(obj) => {
                let Ok(mut obj) = obj.try_borrow_mut() else {
                    return raise("ValueError", "generator already executing");
                };
                match &mut *obj {
                    IterObj::Plain(c) => self.next(c),
                    IterObj::Map(f, c) => {
                        let f = f.clone();
                        match self.next(c)? {
                            Some(x) => Ok(Some(self.call(&f, vec![x], Vec::new())?)),
                            None => Ok(None),
                        }
                    }
                    IterObj::Enumerate(c, n) => match self.next(c)? {
                        Some(x) => {
                            let i = *n;
                            *n = n.checked_add(1).map_or_else(overflow, Ok)?;
                            Ok(Some(Value::tuple(vec![Value::Int(i), x])))
                        }
                        None => Ok(None),
                    },
                    IterObj::Zip(cs) => {
                        let mut row = Vec::with_capacity(cs.len());
                        for c in cs.iter_mut() {
                            match self.next(c)? {
                                Some(x) => row.push(x),
                                None => return Ok(None),
                            }
                        }
                        if row.is_empty() {
                            return Ok(None);
                        }
                        Ok(Some(Value::tuple(row)))
                    }
                }
            }
        }
    }

    fn collect(&mut self, v: &Value) -> R<Vec<Value>> {
        match v {
            Value::List(l) => {
                let items = l.borrow().clone();
                self.step(items.len() as u64 / 8)?;
                return Ok(items);
            }
            Value::Tuple(t) => return Ok(t.to_vec()),
            _ => {}
        }
        let mut cur = self.cursor(v)?;
        let mut out = Vec::new();
        while let Some(x) = self.next(&mut cur)? {
            if out.len() >= MAX_ITEMS {
                return raise("MemoryError", "");
            }
            if out.len() % 8 == 0 {
                self.step(1)?;
            }
            out.push(x);
        }
        Ok(out)
    }

    fn new_iter(&self, obj: IterObj, kind: &'static str) -> Value {
        Value::Iter(Rc::new(RefCell::new(obj)), kind)
    }

    fn get_item(&mut self, o: &Value, k: &Value) -> R<Value> {
        let seq_index = |len: usize, what: &str| -> R<usize> {
            let Some(i) = k.as_int() else {
                return type_error(match what {
                    "string" => format!("string indices must be integers, not '{}'", k.type_name()),
                    _ => format!("{what} indices must be integers or slices, not {}", k.type_name()),
                });
            };
            match normalize(i, len) {
                Some(i) => Ok(i),
                None => raise("IndexError", format!("{what} index out of range")),
            }
        };
        match o {
            Value::List(l) => {
                let l = l.borrow();
                let i = seq_index(l.len(), "list")?;
                Ok(l[i].clone())
            }
            Value::Tuple(t) => Ok(t[seq_index(t.len(), "tuple")?].clone()),
            Value::Str(s) => {
                let n = s.chars().count();
                let i = seq_index(n, "string")?;
                Ok(Value::str(s.chars().nth(i).expect("index checked").to_string()))
            }
            Value::Range(a, b, st) => {
                let n = range_len(*a, *b, *st) as usize;
                let i = seq_index(n, "range object")?;
                Ok(Value::Int(a + st * i as i64))
            }
            Value::Dict(d) => {
                check_hashable(k)?;
                match d.borrow().iter().find(|(key, _)| key.py_eq(k)) {
                    Some((_, v)) => Ok(v.clone()),
                    None => raise("KeyError", k.repr()),
                }
            }
            other => type_error(format!("'{}' object is not subscriptable", other.type_name())),
        }
    }

    fn slice(&mut self, o: &Value, lo: Option<Value>, hi: Option<Value>, st: Option<Value>) -> R<Value> {
        let as_bound = |v: Option<Value>| -> R<Option<i64>> {
            match v {
                None | Some(Value::None) => Ok(None),
                Some(v) => match v.as_int() {
                    Some(i) => Ok(Some(i)),
                    None => type_error("slice indices must be integers or None or have an __index__ method"),
                },
            }
        };
        let (lo, hi, st) = (as_bound(lo)?, as_bound(hi)?, as_bound(st)?);
        let pick = |len: usize| -> R<Vec<usize>> {
            let step = st.unwrap_or(1);
            if step == 0 {
                return raise("ValueError", "slice step cannot be zero");
            }
            Ok(slice_indices(len, lo, hi, step))
        };
        match o {
            Value::List(l) => {
                let l = l.borrow();
                Ok(Value::list(pick(l.len())?.into_iter().map(|i| l[i].clone()).collect()))
            }
            Value::Tuple(t) => Ok(Value::tuple(pick(t.len())?.into_iter().map(|i| t[i].clone()).collect())),
            Value::Str(s) => {
                let chars: Vec<char> = s.chars().collect();
                Ok(Value::str(pick(chars.len())?.into_iter().map(|i| chars[i]).collect::<String>()))
            }
            Value::Range(..) => raise("NotImplementedError", "range slicing is not supported"),
            other => type_error(format!("'{}' object is not subscriptable", other.type_name())),
        }
    }

    fn compare(&mut self, a: &Value, op: CmpOp, b: &Value) -> R<bool> {
        let ord = |sym: &str| -> R<Ordering> {
            a.py_cmp(b).map_or_else(
                || {
                    type_error(format!(
                        "'{sym}' not supported between instances of '{}' and '{}'",
                        a.type_name(),
                        b.type_name()
                    ))
                },
                Ok,
            )
        };
        Ok(match op {
            CmpOp::Eq => a.py_eq(b),
            CmpOp::Ne => !a.py_eq(b),
            CmpOp::Lt => ord("<")? == Ordering::Less,
            CmpOp::Gt => ord(">")? == Ordering::Greater,
            CmpOp::Le => ord("<=")? != Ordering::Greater,
            CmpOp::Ge => ord(">=")? != Ordering::Less,
            CmpOp::Is => a.py_is(b),
            CmpOp::IsNot => !a.py_is(b),
            CmpOp::In => self.contains(b, a)?,
            CmpOp::NotIn => !self.contains(b, a)?,
        })
    }

    fn contains(&mut self, container: &Value, item: &Value) -> R<bool> {
        match container {
            Value::Str(s) => match item {
                Value::Str(sub) => Ok(s.contains(&**sub)),
                other => type_error(format!(
                    "'in <string>' requires string as left operand, not {}",
                    other.type_name()
                )),
            },
            Value::List(l) => Ok(l.borrow().iter().any(|x| x.py_eq(item))),
            Value::Tuple(t) => Ok(t.iter().any(|x| x.py_eq(item))),
            Value::Dict(d) => {
                check_hashable(item)?;
                Ok(d.borrow().iter().any(|(k, _)| k.py_eq(item)))
            }
            Value::Range(a, b, s) => Ok(match item.as_int() {
                Some(i) => {
                    let in_bounds = if *s > 0 { *a <= i && i < *b } else { *b < i && i <= *a };
                    in_bounds && (i as i128 - *a as i128) % (*s as i128) == 0
                }
                None => false,
            }),
            Value::Iter(..) => {
                let mut cur = self.cursor(container)?;
                while let Some(x) = self.next(&mut cur)? {
                    self.step(1)?;
                    if x.py_eq(item) {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            other => type_error(format!("argument of type '{}' is not iterable", other.type_name())),
        }
    }

    fn binop(&mut self, a: &Value, op: BinOp, b: &Value) -> R<Value> {
        if let (Value::Bool(x), Value::Bool(y)) = (a, b) {
            match op {
                BinOp::BitAnd => return Ok(Value::Bool(x & y)),
                BinOp::BitOr => return Ok(Value::Bool(x | y)),
                BinOp::BitXor => return Ok(Value::Bool(x ^ y)),
                _ => {}
            }
        }
        if let (Some(x), Some(y)) = (a.as_int(), b.as_int()) {
            return int_op(x, op, y).map(Value::Int);
        }
        let sym = op_symbol(op);
        match (a, op, b) {
            (Value::Str(x), BinOp::Add, Value::Str(y)) => {
                check_len(x.len() + y.len())?;
                Ok(Value::str(format!("{x}{y}")))
            }
            (Value::Str(_), BinOp::Add, other) => type_error(format!(
                "can only concatenate str (not \"{}\") to str",
                other.type_name()
            )),
            (Value::Str(s), BinOp::Mul, n) | (n, BinOp::Mul, Value::Str(s)) if n.as_int().is_some() => {
                let n = n.as_int().unwrap_or(0).max(0) as usize;
                check_len(s.len().saturating_mul(n))?;
                self.step((s.len() * n / 64) as u64)?;
                Ok(Value::str(s.repeat(n)))
            }
            (Value::Str(_), BinOp::Mod, _) => {
                raise("NotImplementedError", "printf-style formatting is not supported")
            }
            (Value::List(x), BinOp::Add, Value::List(y)) => {
                let mut v = x.borrow().clone();
                v.extend(y.borrow().iter().cloned());
                check_len(v.len())?;
                Ok(Value::list(v))
            }
            (Value::List(_), BinOp::Add, other) => type_error(format!(
                "can only concatenate list (not \"{}\") to list",
                other.type_name()
            )),
            (Value::Tuple(x), BinOp::Add, Value::Tuple(y)) => {
                let mut v = x.to_vec();
                v.extend(y.iter().cloned());
                check_len(v.len())?;
                Ok(Value::tuple(v))
            }
            (Value::Tuple(_), BinOp::Add, other) => type_error(format!(
                "can only concatenate tuple (not \"{}\") to tuple",
                other.type_name()
            )),
            (seq @ (Value::List(_) | Value::Tuple(_)), BinOp::Mul, n)
            | (n, BinOp::Mul, seq @ (Value::List(_) | Value::Tuple(_)))
                if n.as_int().is_some() =>
            {
                let n = n.as_int().unwrap_or(0).max(0) as usize;
                let items = self.collect(seq)?;
                check_len(items.len().saturating_mul(n))?;
                self.step((items.len() * n / 64) as u64)?;
                let mut out = Vec::with_capacity(items.len() * n);
                for _ in 0..n {
                    out.extend(items.iter().cloned());
                }
                Ok(match seq {
                    Value::List(_) => Value::list(out),
                    _ => Value::tuple(out),
                })
            }
            (Value::Str(_) | Value::List(_) | Value::Tuple(_), BinOp::Mul, other)
            | (other, BinOp::Mul, Value::Str(_) | Value::List(_) | Value::Tuple(_)) => type_error(format!(
                "can't multiply sequence by non-int of type '{}'",
                other.type_name()
            )),
            _ => type_error(format!(
                "unsupported operand type(s) for {sym}: '{}' and '{}'",
                a.type_name(),
                b.type_name()
            )),
        }
    }

    fn call(&mut self, f: &Value, pos: Vec<Value>, kw: Vec<(String, Value)>) -> R<Value> {
        self.step(1)?;
        match f {
            Value::Builtin(b) => self.call_builtin(*b, pos, kw),
            Value::Method(recv, name) => self.call_method(recv, name, pos, kw),
            other => type_error(format!("'{}' object is not callable", other.type_name())),
        }
    }

    fn call_builtin(&mut self, b: Builtin, mut pos: Vec<Value>, kw: Vec<(String, Value)>) -> R<Value> {
        let name = b.name();
        match b {
            Builtin::Print => {
                let mut sep = " ".to_string();
                let mut end = "\n".to_string();
                for (k, v) in kw {
                    let slot = match k.as_str() {
                        "sep" => &mut sep,
                        "end" => &mut end,
                        "flush" => continue,
                        _ => return type_error(format!("'{k}' is an invalid keyword argument for print()")),
                    };
                    match v {
                        Value::None => {}
                        Value::Str(s) => *slot = s.to_string(),
                        other => {
                            return type_error(format!("{k} must be None or a string, not {}", other.type_name()))
                        }
                    }
                }
                let text: Vec<String> = pos.iter().map(Value::to_str).collect();
                let mut line = text.join(&sep);
                line.push_str(&end);
                self.write(&line);
                return Ok(Value::None);
            }
            Builtin::Sorted => {
                let (key, reverse) = sort_kwargs(name, kw)?;
                let [v] = exact::<1>(name, pos)?;
                let items = self.collect(&v)?;
                return Ok(Value::list(self.sort(items, key, reverse)?));
            }
            Builtin::Max | Builtin::Min => {
                let mut key = None;
                let mut default = None;
                for (k, v) in kw {
                    match k.as_str() {
                        "key" => key = Some(v).filter(|v| !matches!(v, Value::None)),
                        "default" => default = Some(v),
                        _ => return type_error(format!("{name}() got an unexpected keyword argument '{k}'")),
                    }
                }
                let items = match pos.len() {
                    0 => return type_error(format!("{name} expected at least 1 argument, got 0")),
                    1 => self.collect(&pos[0])?,
                    _ => pos,
                };
                return self.extreme(name, items, key, default, b == Builtin::Max);
            }
            Builtin::Enumerate => {
                let mut start = 0;
                for (k, v) in kw {
                    if k != "start" {
                        return type_error(format!("enumerate() got an unexpected keyword argument '{k}'"));
                    }
                    start = int_arg(&v)?;
                }
                if pos.len() == 2 {
                    start = int_arg(&pos[1])?;
                    pos.truncate(1);
                }
                let [v] = exact::<1>(name, pos)?;
                let c = self.cursor(&v)?;
                return Ok(self.new_iter(IterObj::Enumerate(c, start), "enumerate"));
            }
            Builtin::Int if kw.iter().any(|(k, _)| k == "base") => {
                let base = int_arg(&kw[0].1)?;
                let [v] = exact::<1>(name, pos)?;
                return parse_int(&v, base);
            }
            _ => {}
        }
        if let Some((k, _)) = kw.first() {
            return type_error(format!("{name}() got an unexpected keyword argument '{k}'"));
        }
        match b {
            Builtin::Input => {
                if pos.len() > 1 {
                    return type_error(format!("input expected at most 1 argument, got {}", pos.len()));
                }
                if let Some(p) = pos.first() {
                    let p = p.to_str();
                    self.write(&p);
                }
                Ok(Value::str(self.read_line()?))
            }
            Builtin::Int => match pos.len() {
                0 => Ok(Value::Int(0)),
                1 => parse_int(&pos[0], 10),
                2 => {
                    let base = int_arg(&pos[1])?;
                    parse_int(&pos[0], base)
                }
                n => type_error(format!("int() takes at most 2 arguments ({n} given)")),
            },
            Builtin::Str => match pos.len() {
                0 => Ok(Value::str("")),
                1 => Ok(Value::str(pos[0].to_str())),
                n => type_error(format!("str() takes at most 1 argument ({n} given)")),
            },
            Builtin::Repr => {
                let [v] = exact::<1>(name, pos)?;
                Ok(Value::str(v.repr()))
            }
            Builtin::Bool => match pos.len() {
                0 => Ok(Value::Bool(false)),
                1 => Ok(Value::Bool(pos[0].truthy())),
                n => type_error(format!("bool expected at most 1 argument, got {n}")),
            },
            Builtin::Len => {
                let [v] = exact::<1>(name, pos)?;
                let n = match &v {
                    Value::Str(s) => s.chars().count() as i64,
                    Value::List(l) => l.borrow().len() as i64,
                    Value::Tuple(t) => t.len() as i64,
                    Value::Dict(d) => d.borrow().len() as i64,
                    Value::Range(a, b, s) => range_len(*a, *b, *s),
                    other => return type_error(format!("object of type '{}' has no len()", other.type_name())),
                };
                Ok(Value::Int(n))
            }
            Builtin::Sum => {
                if pos.is_empty() || pos.len() > 2 {
                    return type_error(format!("sum() takes at most 2 arguments ({} given)", pos.len()));
                }
                let mut acc = pos.get(1).cloned().unwrap_or(Value::Int(0));
                if let Value::Str(_) = acc {
                    return type_error("sum() can't sum strings [use ''.join(seq) instead]");
                }
                let items = self.collect(&pos[0])?;
                for x in items {
                    acc = self.binop(&acc, BinOp::Add, &x)?;
                }
                Ok(acc)
            }
            Builtin::Reversed => {
                let [v] = exact::<1>(name, pos)?;
                let mut items = match &v {
                    Value::List(_) | Value::Tuple(_) | Value::Str(_) | Value::Range(..) | Value::Dict(_) => {
                        self.collect(&v)?
                    }
                    other => return type_error(format!("'{}' object is not reversible", other.type_name())),
                };
                items.reverse();
                Ok(self.new_iter(IterObj::Plain(Cursor::Items(Rc::new(items), 0)), "reversed"))
            }
            Builtin::Map => {
                if pos.len() < 2 {
                    return type_error("map() must have at least two arguments.");
                }
                let f = pos.remove(0);
                let mut cursors = Vec::with_capacity(pos.len());
                for v in &pos {
                    cursors.push(self.cursor(v)?);
                }
                if cursors.len() == 1 {
                    let c = cursors.pop().expect("one cursor");
                    return Ok(self.new_iter(IterObj::Map(f, c), "map"));
                }
                raise("NotImplementedError", "map() over several iterables is not supported")
            }
            Builtin::Zip => {
                let mut cursors = Vec::with_capacity(pos.len());
                for v in &pos {
                    cursors.push(self.cursor(v)?);
                }
                Ok(self.new_iter(IterObj::Zip(cursors), "zip"))
            }
            Builtin::List => match pos.len() {
                0 => Ok(Value::list(Vec::new())),
                1 => Ok(Value::list(self.collect(&pos[0])?)),
                n => type_error(format!("list expected at most 1 argument, got {n}")),
            },
            Builtin::Tuple => match pos.len() {
                0 => Ok(Value::tuple(Vec::new())),
                1 => Ok(Value::tuple(self.collect(&pos[0])?)),
                n => type_error(format!("tuple expected at most 1 argument, got {n}")),
            },
            Builtin::Dict => {
                let d = Value::Dict(Rc::new(RefCell::new(Vec::new())));
                match pos.len() {
                    0 => {}
                    1 => {
                        let src = match &pos[0] {
                            Value::Dict(src) => src.borrow().iter().map(|(k, v)| Value::tuple(vec![k.clone(), v.clone()])).collect(),
                            other => self.collect(other)?,
                        };
                        for (i, pair) in src.iter().enumerate() {
                            let kv = self.collect(pair).map_err(|_| {
                                Signal::Raise(Exc {
                                    name: "TypeError",
                                    message: format!("cannot convert dictionary update sequence element #{i} to a sequence"),
                                    line: None,
                                })
                            })?;
                            if kv.len() != 2 {
                                return raise(
                                    "ValueError",
                                    format!("dictionary update sequence element #{i} has length {}; 2 is required", kv.len()),
                                );
                            }
                            let mut kv = kv.into_iter();
                            let (k, v) = (kv.next().expect("len 2"), kv.next().expect("len 2"));
                            self.set_item(&d, k, v)?;
                        }
                    }
                    n => return type_error(format!("dict expected at most 1 argument, got {n}")),
                }
                Ok(d)
            }
            Builtin::Range => {
                let ints: Vec<i64> = pos.iter().map(int_arg).collect::<R<_>>()?;
                let (a, b, s) = match ints[..] {
                    [stop] => (0, stop, 1),
                    [start, stop] => (start, stop, 1),
                    [start, stop, step] => (start, stop, step),
                    _ => return type_error(format!("range expected at most 3 arguments, got {}", ints.len())),
                };
                if s == 0 {
                    return raise("ValueError", "range() arg 3 must not be zero");
                }
                Ok(Value::Range(a, b, s))
            }
            Builtin::Abs => {
                let [v] = exact::<1>(name, pos)?;
                match v.as_int() {
                    Some(i) => Ok(Value::Int(i.checked_abs().map_or_else(overflow, Ok)?)),
                    None => type_error(format!("bad operand type for abs(): '{}'", v.type_name())),
                }
            }
            Builtin::Any | Builtin::All => {
                let [v] = exact::<1>(name, pos)?;
                let want = b == Builtin::Any;
                let mut cur = self.cursor(&v)?;
                while let Some(x) = self.next(&mut cur)? {
                    self.step(1)?;
                    if x.truthy() == want {
                        return Ok(Value::Bool(want));
                    }
                }
                Ok(Value::Bool(!want))
            }
            Builtin::Ord => {
                let [v] = exact::<1>(name, pos)?;
                match &v {
                    Value::Str(s) if s.chars().count() == 1 => {
                        Ok(Value::Int(s.chars().next().expect("one char") as i64))
                    }
                    Value::Str(s) => type_error(format!(
                        "ord() expected a character, but string of length {} found",
                        s.chars().count()
                    )),
                    other => type_error(format!(
                        "ord() expected string of length 1, but {} found",
                        other.type_name()
                    )),
                }
            }
            Builtin::Chr => {
                let [v] = exact::<1>(name, pos)?;
                let i = int_arg(&v)?;
                match u32::try_from(i).ok().and_then(char::from_u32) {
                    Some(c) => Ok(Value::str(c.to_string())),
                    None => raise("ValueError", "chr() arg not in range(0x110000)"),
                }
            }
            Builtin::Print | Builtin::Sorted | Builtin::Max | Builtin::Min | Builtin::Enumerate => {
                unreachable!("handled above")
            }
        }
    }

    fn extreme(
        &mut self,
        name: &str,
        items: Vec<Value>,
        key: Option<Value>,
        default: Option<Value>,
        max: bool,
    ) -> R<Value> {
        let mut best: Option<(Value, Value)> = None;
        for x in items {
            self.step(1)?;
            let k = match &key {
                Some(f) => self.call(f, vec![x.clone()], Vec::new())?,
                None => x.clone(),
            };
            let replace = match &best {
                None => true,
                Some((_, bk)) => {
                    let Some(o) = k.py_cmp(bk) else {
                        return type_error(format!(
                            "'{}' not supported between instances of '{}' and '{}'",
                            if max { ">" } else { "<" },
                            k.type_name(),
                            bk.type_name()
                        ));
                    };
                    o == if max { Ordering::Greater } else { Ordering::Less }
                }
            };
            if replace {
                best = Some((x, k));
            }
        }
        match (best, default) {
            (Some((v, _)), _) => Ok(v),
            (None, Some(d)) => Ok(d),
            (None, None) => raise("ValueError", format!("{name}() arg is an empty sequence")),
        }
    }

    fn sort(&mut self, items: Vec<Value>, key: Option<Value>, reverse: bool) -> R<Vec<Value>> {
        let n = items.len();
        self.step(n as u64)?;
        let keys = match &key {
            Some(f) => {
                let mut ks = Vec::with_capacity(n);
                for x in &items {
                    ks.push(self.call(f, vec![x.clone()], Vec::new())?);
                }
                ks
            }
            None => items.clone(),
        };
        let mut err: Option<(&'static str, &'static str)> = None;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            let (a, b) = if reverse { (&keys[j], &keys[i]) } else { (&keys[i], &keys[j]) };
            a.py_cmp(b).unwrap_or_else(|| {
                err.get_or_insert((a.type_name(), b.type_name()));
                Ordering::Equal
            })
        });
        if let Some((a, b)) = err {
            return type_error(format!("'<' not supported between instances of '{a}' and '{b}'"));
        }
        Ok(order.into_iter().map(|i| items[i].clone()).collect())
    }

    fn call_method(&mut self, recv: &Value, name: &str, pos: Vec<Value>, kw: Vec<(String, Value)>) -> R<Value> {
        match recv {
            Value::Str(s) => self.str_method(s, name, pos, kw),
            Value::List(l) => self.list_method(recv, l, name, pos, kw),
            Value::Tuple(t) => {
                no_kw(name, &kw)?;
                let [x] = exact::<1>(name, pos)?;
                seq_count_index(t, name, &x, "tuple.index(x): x not in tuple")
            }
            Value::Dict(d) => {
                no_kw(name, &kw)?;
                self.dict_method(d, name, pos)
            }
            other => raise(
                "AttributeError",
                format!("'{}' object has no attribute '{name}'", other.type_name()),
            ),
        }
    }

    fn str_method(&mut self, s: &Rc<str>, name: &str, mut pos: Vec<Value>, kw: Vec<(String, Value)>) -> R<Value> {
        if name == "split" {
            for (k, v) in kw {
                match k.as_str() {
                    "sep" if pos.is_empty() => pos.push(v),
                    "maxsplit" => {
                        if pos.is_empty() {
                            pos.push(Value::None);
                        }
                        pos.push(v)
                    }
                    _ => return type_error(format!("split() got an unexpected keyword argument '{k}'")),
                }
            }
            let sep = match pos.first() {
                None | Some(Value::None) => None,
                Some(Value::Str(sep)) => Some(sep.clone()),
                Some(other) => return type_error(format!("must be str or None, not {}", other.type_name())),
            };
            let maxsplit = match pos.get(1) {
                Some(v) => int_arg(v)?,
                None => -1,
            };
            if pos.len() > 2 {
                return type_error(format!("split() takes at most 2 arguments ({} given)", pos.len()));
            }
            let parts = split(s, sep.as_deref(), maxsplit)?;
            self.step(parts.len() as u64 / 8)?;
            return Ok(Value::list(parts.into_iter().map(Value::str).collect()));
        }
        no_kw(name, &kw)?;
        let str_arg = |v: &Value| -> R<Rc<str>> {
            match v {
                Value::Str(s) => Ok(s.clone()),
                other => type_error(format!("must be str, not {}", other.type_name())),
            }
        };
        let chars_arg = |pos: &[Value]| -> R<Option<Vec<char>>> {
            match pos.first() {
                None | Some(Value::None) => Ok(None),
                Some(v) => Ok(Some(str_arg(v)?.chars().collect())),
            }
        };
        let s: &str = s;
        match name {
            "strip" | "lstrip" | "rstrip" => {
                let chars = chars_arg(&pos)?;
                let matches = |c: char| match &chars {
                    None => c.is_whitespace(),
                    Some(cs) => cs.contains(&c),
                };
                let out = match name {
                    "strip" => s.trim_matches(matches),
                    "lstrip" => s.trim_start_matches(matches),
                    _ => s.trim_end_matches(matches),
                };
                Ok(Value::str(out))
            }
            "upper" => Ok(Value::str(s.to_uppercase())),
            "lower" => Ok(Value::str(s.to_lowercase())),
            "isdigit" => Ok(Value::Bool(!s.is_empty() && s.chars().all(|c| c.is_ascii_digit()))),
            "isalpha" => Ok(Value::Bool(!s.is_empty() && s.chars().all(char::is_alphabetic))),
            "join" => {
                let [v] = exact::<1>(name, pos)?;
                let items = self.collect(&v)?;
                let mut parts = Vec::with_capacity(items.len());
                for (i, it) in items.iter().enumerate() {
                    match it {
                        Value::Str(p) => parts.push(p.to_string()),
                        other => {
                            return type_error(format!(
                                "sequence item {i}: expected str instance, {} found",
                                other.type_name()
                            ))
                        }
                    }
                }
                let out = parts.join(s);
                check_len(out.len())?;
                Ok(Value::str(out))
            }
            "count" => {
                let [v] = exact::<1>(name, pos)?;
                let sub = str_arg(&v)?;
                let n = if sub.is_empty() { s.chars().count() + 1 } else { s.matches(&*sub).count() };
                Ok(Value::Int(n as i64))
            }
            "replace" => {
                if pos.len() < 2 || pos.len() > 3 {
                    return type_error(format!("replace expected 2 arguments, got {}", pos.len()));
                }
                let old = str_arg(&pos[0])?;
                let new = str_arg(&pos[1])?;
                let count = match pos.get(2) {
                    Some(v) => int_arg(v)?,
                    None => -1,
                };
                let out = if count < 0 {
                    s.replace(&*old, &new)
                } else {
                    s.replacen(&*old, &new, count as usize)
                };
                check_len(out.len())?;
                Ok(Value::str(out))
            }
            "startswith" | "endswith" => {
                let [v] = exact::<1>(name, pos)?;
                let options = match &v {
                    Value::Tuple(t) => t.iter().map(str_arg).collect::<R<Vec<_>>>()?,
                    other => vec![str_arg(other)?],
                };
                Ok(Value::Bool(options.iter().any(|p| {
                    if name == "startswith" {
                        s.starts_with(&**p)
                    } else {
                        s.ends_with(&**p)
                    }
                })))
            }
            "find" | "index" => {
                let [v] = exact::<1>(name, pos)?;
                let sub = str_arg(&v)?;
                match s.find(&*sub) {
                    Some(b) => Ok(Value::Int(s[..b].chars().count() as i64)),
                    None if name == "find" => Ok(Value::Int(-1)),
                    None => raise("ValueError", "substring not found"),
                }
            }
            _ => raise("AttributeError", format!("'str' object has no attribute '{name}'")),
        }
    }

    fn list_method(
        &mut self,
        recv: &Value,
        l: &Rc<RefCell<Vec<Value>>>,
        name: &str,
        mut pos: Vec<Value>,
        kw: Vec<(String, Value)>,
    ) -> R<Value> {
        if name == "sort" {
            let (key, reverse) = sort_kwargs(name, kw)?;
            exact::<0>(name, pos)?;
            let items = std::mem::take(&mut *l.borrow_mut());
            let sorted = self.sort(items.clone(), key, reverse);
            *l.borrow_mut() = match sorted {
                Ok(v) => v,
                Err(e) => {
                    *l.borrow_mut() = items;
                    return Err(e);
                }
            };
            return Ok(Value::None);
        }
        no_kw(name, &kw)?;
        match name {
            "append" => {
                let [x] = exact::<1>(name, pos)?;
                if l.borrow().len() >= MAX_ITEMS {
                    return raise("MemoryError", "");
                }
                l.borrow_mut().push(x);
                Ok(Value::None)
            }
            "pop" => {
                let mut v = l.borrow_mut();
                if v.is_empty() {
                    return raise("IndexError", "pop from empty list");
                }
                let i = match pos.len() {
                    0 => v.len() - 1,
                    1 => match normalize(int_arg(&pos[0])?, v.len()) {
                        Some(i) => i,
                        None => return raise("IndexError", "pop index out of range"),
                    },
                    n => return type_error(format!("pop expected at most 1 argument, got {n}")),
                };
                Ok(v.remove(i))
            }
            "reverse" => {
                exact::<0>(name, pos)?;
                l.borrow_mut().reverse();
                Ok(Value::None)
            }
            "clear" => {
                exact::<0>(name, pos)?;
                l.borrow_mut().clear();
                Ok(Value::None)
            }
            "copy" => {
                exact::<0>(name, pos)?;
                Ok(Value::list(l.borrow().clone()))
            }
            "count" | "index" => {
                let [x] = exact::<1>(name, pos)?;
                let items = l.borrow().clone();
                let msg = format!("{} is not in list", x.repr());
                seq_count_index(&items, name, &x, &msg)
            }
            "insert" => {
                let [i, x] = exact::<2>(name, std::mem::take(&mut pos))?;
                let i = int_arg(&i)?;
                let mut v = l.borrow_mut();
                let len = v.len() as i64;
                let at = if i < 0 { (i + len).max(0) } else { i.min(len) };
                v.insert(at as usize, x);
                Ok(Value::None)
            }
            "extend" => {
                let [x] = exact::<1>(name, pos)?;
                let extra = self.collect(&x)?;
                if l.borrow().len() + extra.len() > MAX_ITEMS {
                    return raise("MemoryError", "");
                }
                l.borrow_mut().extend(extra);
                Ok(Value::None)
            }
            "remove" => {
                let [x] = exact::<1>(name, pos)?;
                let mut v = l.borrow_mut();
                match v.iter().position(|y| y.py_eq(&x)) {
                    Some(i) => {
                        v.remove(i);
                        Ok(Value::None)
                    }
                    None => raise("ValueError", "list.remove(x): x not in list"),
                }
            }
            _ => raise(
                "AttributeError",
                format!("'{}' object has no attribute '{name}'", recv.type_name()),
            ),
        }
    }

    fn dict_method(&mut self, d: &Rc<RefCell<Vec<(Value, Value)>>>, name: &str, pos: Vec<Value>) -> R<Value> {
        match name {
            "get" => {
                if pos.is_empty() || pos.len() > 2 {
                    return type_error(format!("get expected at most 2 arguments, got {}", pos.len()));
                }
                check_hashable(&pos[0])?;
                let found = d.borrow().iter().find(|(k, _)| k.py_eq(&pos[0])).map(|(_, v)| v.clone());
                Ok(found.unwrap_or_else(|| pos.get(1).cloned().unwrap_or(Value::None)))
            }
            "keys" | "values" | "items" => {
                exact::<0>(name, pos)?;
                let items = d
                    .borrow()
                    .iter()
                    .map(|(k, v)| match name {
                        "keys" => k.clone(),
                        "values" => v.clone(),
                        _ => Value::tuple(vec![k.clone(), v.clone()]),
                    })
                    .collect();
                Ok(Value::list(items))
            }
            "pop" => {
                if pos.is_empty() || pos.len() > 2 {
                    return type_error(format!("pop expected at most 2 arguments, got {}", pos.len()));
                }
                check_hashable(&pos[0])?;
                let mut v = d.borrow_mut();
                match v.iter().position(|(k, _)| k.py_eq(&pos[0])) {
                    Some(i) => Ok(v.remove(i).1),
                    None => match pos.get(1) {
                        Some(default) => Ok(default.clone()),
                        None => raise("KeyError", pos[0].repr()),
                    },
                }
            }
            _ => raise("AttributeError", format!("'dict' object has no attribute '{name}'")),
        }
    }
}

fn target_names(e: &Expr, out: &mut Vec<String>) {
    match &e.kind {
        ExprKind::Name(n) => out.push(n.clone()),
        ExprKind::Tuple(items) | ExprKind::List(items) => {
            items.iter().for_each(|i| target_names(i, out))
        }
        ExprKind::Starred(inner) => target_names(inner, out),
        _ => {}
    }
}

fn normalize(i: i64, len: usize) -> Option<usize> {
    let len = len as i64;
    let j = if i < 0 { i.checked_add(len)? } else { i };
    (0..len).contains(&j).then_some(j as usize)
}

fn slice_indices(len: usize, lo: Option<i64>, hi: Option<i64>, step: i64) -> Vec<usize> {
    let len = len as i128;
    let step = step as i128;
    let (lower, upper) = if step > 0 { (0, len) } else { (-1, len - 1) };
    let clamp = |v: Option<i64>, default: i128| -> i128 {
        match v {
            None => default,
            Some(v) => {
                let mut v = v as i128;
                if v < 0 {
                    v += len;
                    if v < lower {
                        v = lower;
                    }
                } else if v > upper {
                    v = upper;
                }
                v
            }
        }
    };
    let start = clamp(lo, if step > 0 { lower } else { upper });
    let stop = clamp(hi, if step > 0 { upper } else { lower });
    let mut out = Vec::new();
    let mut i = start;
    while (step > 0 && i < stop) || (step < 0 && i > stop) {
        out.push(i as usize);
        i += step;
    }
    out
}

fn split(s: &str, sep: Option<&str>, maxsplit: i64) -> R<Vec<String>> {
    let limit = if maxsplit < 0 { usize::MAX } else { maxsplit as usize };
    match sep {
        Some("") => raise("ValueError", "empty separator"),
        Some(sep) => Ok(s.splitn(limit.saturating_add(1), sep).map(str::to_string).collect()),
        None => {
            let mut parts = Vec::new();
            let mut rest = s.trim_start();
            while !rest.is_empty() {
                if parts.len() == limit {
                    parts.push(rest.to_string());
                    break;
                }
                let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
                parts.push(rest[..end].to_string());
                rest = rest[end..].trim_start();
            }
            Ok(parts)
        }
    }
}

fn int_op(x: i64, op: BinOp, y: i64) -> R<i64> {
    let checked = |v: Option<i64>| v.map_or_else(overflow, Ok);
    match op {
        BinOp::Add => checked(x.checked_add(y)),
        BinOp::Sub => checked(x.checked_sub(y)),
        BinOp::Mul => checked(x.checked_mul(y)),
        BinOp::FloorDiv => {
            if y == 0 {
                return raise("ZeroDivisionError", "integer division or modulo by zero");
            }
            let q = checked(x.checked_div(y))?;
            Ok(if x % y != 0 && ((x < 0) != (y < 0)) { q - 1 } else { q })
        }
        BinOp::Mod => {
            if y == 0 {
                return raise("ZeroDivisionError", "integer modulo by zero");
            }
            let r = x.checked_rem(y).unwrap_or(0);
            Ok(if r != 0 && ((r < 0) != (y < 0)) { r + y } else { r })
        }
        BinOp::Div => {
            if y == 0 {
                return raise("ZeroDivisionError", "division by zero");
            }
            raise("NotImplementedError", "true division produces a float; floats are not supported")
        }
        BinOp::Pow => {
            if y < 0 {
                return raise("NotImplementedError", "negative powers produce a float; floats are not supported");
            }
            match x {
                0 | 1 => Ok(if y == 0 { 1 } else { x }),
                -1 => Ok(if y % 2 == 0 { 1 } else { -1 }),
                _ => checked(u32::try_from(y).ok().and_then(|y| x.checked_pow(y))),
            }
        }
        BinOp::BitAnd => Ok(x & y),
        BinOp::BitOr => Ok(x | y),
        BinOp::BitXor => Ok(x ^ y),
        BinOp::Shl => {
            if y < 0 {
                return raise("ValueError", "negative shift count");
            }
            if x == 0 {
                return Ok(0);
            }
            if y >= 64 {
                return overflow();
            }
            let v = (x as i128) << y;
            checked(i64::try_from(v).ok())
        }
        BinOp::Shr => {
            if y < 0 {
                return raise("ValueError", "negative shift count");
            }
            Ok(if y >= 64 { if x < 0 { -1 } else { 0 } } else { x >> y })
        }
        BinOp::MatMul => type_error("unsupported operand type(s) for @: 'int' and 'int'"),
    }
}

fn op_symbol(op: BinOp) -> &'static str {
    match op {
        BinOp::Add => "+",
        BinOp::Sub => "-",
        BinOp::Mul => "*",
        BinOp::Div => "/",
        BinOp::FloorDiv => "//",
        BinOp::Mod => "%",
        BinOp::Pow => "** or pow()",
        BinOp::BitAnd => "&",
        BinOp::BitOr => "|",
        BinOp::BitXor => "^",
        BinOp::Shl => "<<",
        BinOp::Shr => ">>",
        BinOp::MatMul => "@",
    }
}

fn check_len(n: usize) -> R<()> {
    if n > MAX_ITEMS {
        return raise("MemoryError", "");
    }
    Ok(())
}

fn check_hashable(v: &Value) -> R<()> {
    if v.is_hashable() {
        Ok(())
    } else {
        type_error(format!("unhashable type: '{}'", v.type_name()))
    }
}

fn int_arg(v: &Value) -> R<i64> {
    v.as_int().map_or_else(
        || type_error(format!("'{}' object cannot be interpreted as an integer", v.type_name())),
        Ok,
    )
}

fn exact<const N: usize>(name: &str, pos: Vec<Value>) -> R<[Value; N]> {
    let n = pos.len();
    pos.try_into().or_else(|_| {
        type_error(match N {
            0 => format!("{name}() takes no arguments ({n} given)"),
            1 => format!("{name}() takes exactly one argument ({n} given)"),
            _ => format!("{name} expected {N} arguments, got {n}"),
        })
    })
}

fn no_kw(name: &str, kw: &[(String, Value)]) -> R<()> {
    if kw.is_empty() {
        Ok(())
    } else {
        type_error(format!("{name}() takes no keyword arguments"))
    }
}

fn sort_kwargs(name: &str, kw: Vec<(String, Value)>) -> R<(Option<Value>, bool)> {
    let mut key = None;
    let mut reverse = false;
    for (k, v) in kw {
        match k.as_str() {
            "key" => key = Some(v).filter(|v| !matches!(v, Value::None)),
            "reverse" => reverse = v.truthy(),
            _ => return type_error(format!("{name}() got an unexpected keyword argument '{k}'")),
        }
    }
    Ok((key, reverse))
}

fn seq_count_index(items: &[Value], name: &str, x: &Value, missing: &str) -> R<Value> {
    if name == "count" {
        return Ok(Value::Int(items.iter().filter(|y| y.py_eq(x)).count() as i64));
    }
    match items.iter().position(|y| y.py_eq(x)) {
        Some(i) => Ok(Value::Int(i as i64)),
        None => raise("ValueError", missing.to_string()),
    }
}

fn parse_int(v: &Value, base: i64) -> R<Value> {
    match v {
        Value::Int(_) | Value::Bool(_) if base == 10 => Ok(Value::Int(v.as_int().expect("int"))),
        Value::Str(s) => {
            if !(2..=36).contains(&base) {
                return raise("ValueError", "int() base must be >= 2 and <= 36, or 0");
            }
            let invalid = || raise("ValueError", format!("invalid literal for int() with base {base}: {}", v.repr()));
            let t = s.trim();
            let (neg, digits) = match t.strip_prefix('-') {
                Some(d) => (true, d),
                None => (false, t.strip_prefix('+').unwrap_or(t)),
            };
            let well_formed = !digits.is_empty()
                && !digits.starts_with('_')
                && !digits.ends_with('_')
                && !digits.contains("__")
                && digits.chars().all(|c| c == '_' || c.is_digit(base as u32));
            if !well_formed {
                return invalid();
            }
            let clean: String = digits.chars().filter(|&c| c != '_').collect();
            let text = if neg { format!("-{clean}") } else { clean };
            match i64::from_str_radix(&text, base as u32) {
                Ok(i) => Ok(Value::Int(i)),
                Err(_) => overflow(),
            }
        }
        Value::Int(_) | Value::Bool(_) => type_error("int() can't convert non-string with explicit base"),
        other => type_error(format!(
            "int() argument must be a string, a bytes-like object or a real number, not '{}'",
            other.type_name()
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn python_slices() {
        assert_eq!(slice_indices(5, None, None, -1), vec![4, 3, 2, 1, 0]);
        assert_eq!(slice_indices(5, Some(1), Some(-1), 1), vec![1, 2, 3]);
        assert_eq!(slice_indices(5, Some(-100), Some(100), 2), vec![0, 2, 4]);
        assert_eq!(slice_indices(5, Some(3), None, -2), vec![3, 1]);
        assert!(slice_indices(0, None, None, -1).is_empty());
    }

    #[test]
    fn floor_semantics() {
        assert_eq!(int_op(-7, BinOp::FloorDiv, 2).ok(), Some(-4));
        assert_eq!(int_op(7, BinOp::FloorDiv, -2).ok(), Some(-4));
        assert_eq!(int_op(-7, BinOp::Mod, 2).ok(), Some(1));
        assert_eq!(int_op(7, BinOp::Mod, -2).ok(), Some(-1));
        assert_eq!(int_op(2, BinOp::Pow, 10).ok(), Some(1024));
        assert!(int_op(i64::MIN, BinOp::FloorDiv, -1).is_err());
    }

    #[test]
    fn whitespace_split() {
        assert_eq!(split("  a b\tc  ", None, -1).ok(), Some(vec!["a".into(), "b".into(), "c".into()]));
        assert_eq!(split("a b  c ", None, 1).ok(), Some(vec!["a".into(), "b  c ".into()]));
        assert_eq!(split("a,,b", Some(","), -1).ok(), Some(vec!["a".into(), "".into(), "b".into()]));
        assert!(split("", None, -1).unwrap_or_default().is_empty());
    }

    #[test]
    fn int_parsing() {
        let ok = |s: &str| match parse_int(&Value::str(s), 10) {
            Ok(Value::Int(i)) => Some(i),
            _ => None,
        };
        assert_eq!(ok(" -12 "), Some(-12));
        assert_eq!(ok("1_000"), Some(1000));
        assert_eq!(ok("1__0"), None);
        assert_eq!(ok("x"), None);
        assert_eq!(ok(""), None);
    }
}
