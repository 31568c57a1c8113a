use std::cell::RefCell;
use std::cmp::Ordering;
use std::rc::Rc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    Print,
    Input,
    Int,
    Str,
    Bool,
    Len,
    Max,
    Min,
    Sum,
    Sorted,
    Reversed,
    Map,
    List,
    Tuple,
    Dict,
    Range,
    Abs,
    Enumerate,
    Zip,
    Any,
    All,
    Ord,
    Chr,
    Repr,
}

impl Builtin {
    pub fn lookup(name: &str) -> Option<Builtin> {
        use Builtin::*;
        Some(match name {
            "print" => Print,
            "input" => Input,
            "int" => Int,
            "str" => Str,
            "bool" => Bool,
            "len" => Len,
            "max" => Max,
            "min" => Min,
            "sum" => Sum,
            "sorted" => Sorted,
            "reversed" => Reversed,
            "map" => Map,
            "list" => List,
            "tuple" => Tuple,
            "dict" => Dict,
            "range" => Range,
            "abs" => Abs,
            "enumerate" => Enumerate,
            "zip" => Zip,
            "any" => Any,
            "all" => All,
            "ord" => Ord,
            "chr" => Chr,
            "repr" => Repr,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        use Builtin::*;
        match self {
            Print => "print",
            Input => "input",
            Int => "int",
            Str => "str",
            Bool => "bool",
            Len => "len",
            Max => "max",
            Min => "min",
            Sum => "sum",
            Sorted => "sorted",
            Reversed => "reversed",
            Map => "map",
            List => "list",
            Tuple => "tuple",
            Dict => "dict",
            Range => "range",
            Abs => "abs",
            Enumerate => "enumerate",
            Zip => "zip",
            Any => "any",
            All => "all",
            Ord => "ord",
            Chr => "chr",
            Repr => "repr",
        }
    }

    pub fn is_type(self) -> bool {
        matches!(
            self,
            Builtin::Int
                | Builtin::Str
                | Builtin::Bool
                | Builtin::List
                | Builtin::Tuple
                | Builtin::Dict
                | Builtin::Range
                | Builtin::Map
                | Builtin::Reversed
                | Builtin::Enumerate
                | Builtin::Zip
        )
    }
}

/// Position within an iterable.
#[derive(Debug, Clone)]
pub enum Cursor {
    Range { cur: i64, stop: i64, step: i64 },
    List(Rc<RefCell<Vec<Value>>>, usize),
    Items(Rc<Vec<Value>>, usize),
    Iter(Rc<RefCell<IterObj>>),
}

#[derive(Debug, Clone)]
pub enum IterObj {
    Plain(Cursor),
    Map(Value, Cursor),
    Enumerate(Cursor, i64),
    Zip(Vec<Cursor>),
}

#[derive(Debug, Clone)]
pub enum Value {
    None,
    Bool(bool),
    Int(i64),
    Str(Rc<str>),
    List(Rc<RefCell<Vec<Value>>>),
    Tuple(Rc<Vec<Value>>),
    /// Insertion-ordered association list.
    Dict(Rc<RefCell<Vec<(Value, Value)>>>),
    Range(i64, i64, i64),
    Iter(Rc<RefCell<IterObj>>, &'static str),
    Builtin(Builtin),
    Method(Box<Value>, &'static str),
}

impl Value {
    pub fn str(s: impl Into<Rc<str>>) -> Value {
        Value::Str(s.into())
    }

    pub fn list(items: Vec<Value>) -> Value {
        Value::List(Rc::new(RefCell::new(items)))
    }

    pub fn tuple(items: Vec<Value>) -> Value {
        Value::Tuple(Rc::new(items))
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::None => "NoneType",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Str(_) => "str",
            Value::List(_) => "list",
            Value::Tuple(_) => "tuple",
            Value::Dict(_) => "dict",
            Value::Range(..) => "range",
            Value::Iter(_, kind) => kind,
            Value::Builtin(b) if b.is_type() => "type",
            Value::Builtin(_) => "builtin_function_or_method",
            Value::Method(..) => "builtin_function_or_method",
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            Value::Bool(b) => Some(*b as i64),
            _ => None,
        }
    }

    pub fn truthy(&self) -> bool {
        match self {
            Value::None => false,
            Value::Bool(b) => *b,
            Value::Int(i) => *i != 0,
            Value::Str(s) => !s.is_empty(),
            Value::List(l) => !l.borrow().is_empty(),
            Value::Tuple(t) => !t.is_empty(),
            Value::Dict(d) => !d.borrow().is_empty(),
            Value::Range(start, stop, step) => range_len(*start, *stop, *step) > 0,
            _ => true,
        }
    }

    pub fn is_hashable(&self) -> bool {
        match self {
            Value::List(_) | Value::Dict(_) => false,
            Value::Tuple(t) => t.iter().all(Value::is_hashable),
            _ => true,
        }
    }

    pub fn to_str(&self) -> String {
        match self {
            Value::Str(s) => s.to_string(),
            other => other.repr(),
        }
    }

    pub fn repr(&self) -> String {
        let mut out = String::new();
        self.write_repr(&mut out, 0);
        out
    }

    fn write_repr(&self, out: &mut String, depth: usize) {
        if depth > 64 {
            out.push_str("...");
            return;
        }
        match self {
            Value::None => out.push_str("None"),
            Value::Bool(true) => out.push_str("True"),
            Value::Bool(false) => out.push_str("False"),
            Value::Int(i) => out.push_str(&i.to_string()),
            Value::Str(s) => out.push_str(&repr_str(s)),
            Value::List(l) => {
                let Ok(items) = l.try_borrow() else {
                    out.push_str("[...]");
                    return;
                };
                out.push('[');
                join_repr(out, &items, depth);
                out.push(']');
            }
            Value::Tuple(t) => {
                out.push('(');
                join_repr(out, t, depth);
                if t.len() == 1 {
                    out.push(',');
                }
                out.push(')');
            }
            Value::Dict(d) => {
                let Ok(items) = d.try_borrow() else {
                    out.push_str("{...}");
                    return;
                };
                out.push('{');
                for (i, (k, v)) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    k.write_repr(out, depth + 1);
                    out.push_str(": ");
                    v.write_repr(out, depth + 1);
                }
                out.push('}');
            }
            Value::Range(a, b, 1) => out.push_str(&format!("range({a}, {b})")),
            Value::Range(a, b, s) => out.push_str(&format!("range({a}, {b}, {s})")),
            Value::Iter(_, kind) => out.push_str(&format!("<{kind} object>")),
            Value::Builtin(b) if b.is_type() => out.push_str(&format!("<class '{}'>", b.name())),
            Value::Builtin(b) => out.push_str(&format!("<built-in function {}>", b.name())),
            Value::Method(recv, name) => {
                out.push_str(&format!("<built-in method {name} of {} object>", recv.type_name()))
            }
        }
    }

    /// Python `==`.
    pub fn py_eq(&self, other: &Value) -> bool {
        if let (Some(a), Some(b)) = (self.as_int(), other.as_int()) {
            return a == b;
        }
        match (self, other) {
            (Value::None, Value::None) => true,
            (Value::Str(a), Value::Str(b)) => a == b,
            (Value::List(a), Value::List(b)) => {
                Rc::ptr_eq(a, b) || seq_eq(&a.borrow(), &b.borrow())
            }
            (Value::Tuple(a), Value::Tuple(b)) => seq_eq(a, b),
            (Value::Dict(a), Value::Dict(b)) => {
                if Rc::ptr_eq(a, b) {
                    return true;
                }
                let (a, b) = (a.borrow(), b.borrow());
                a.len() == b.len()
                    && a.iter().all(|(k, v)| {
                        b.iter().any(|(k2, v2)| k.py_eq(k2) && v.py_eq(v2))
                    })
            }
            (Value::Range(a1, b1, s1), Value::Range(a2, b2, s2)) => {
                let (n1, n2) = (range_len(*a1, *b1, *s1), range_len(*a2, *b2, *s2));
                n1 == n2 && (n1 == 0 || (a1 == a2 && (n1 == 1 || s1 == s2)))
            }
            (Value::Iter(a, _), Value::Iter(b, _)) => Rc::ptr_eq(a, b),
            (Value::Builtin(a), Value::Builtin(b)) => a == b,
            _ => false,
        }
    }

    /// Python `is`, approximated by value identity for immutable scalars.
    pub fn py_is(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::None, Value::None) => true,
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Int(a), Value::Int(b)) => a == b && (-5..=256).contains(a),
            (Value::Str(a), Value::Str(b)) => Rc::ptr_eq(a, b),
            (Value::List(a), Value::List(b)) => Rc::ptr_eq(a, b),
            (Value::Tuple(a), Value::Tuple(b)) => Rc::ptr_eq(a, b),
            (Value::Dict(a), Value::Dict(b)) => Rc::ptr_eq(a, b),
            (Value::Iter(a, _), Value::Iter(b, _)) => Rc::ptr_eq(a, b),
            (Value::Builtin(a), Value::Builtin(b)) => a == b,
            _ => false,
        }
    }

    /// Python ordering; `None` when the types are not comparable.
    pub fn py_cmp(&self, other: &Value) -> Option<Ordering> {
        if let (Some(a), Some(b)) = (self.as_int(), other.as_int()) {
            return Some(a.cmp(&b));
        }
        match (self, other) {
            (Value::Str(a), Value::Str(b)) => Some(a.cmp(b)),
            (Value::List(a), Value::List(b)) => {
                if Rc::ptr_eq(a, b) {
                    return Some(Ordering::Equal);
                }
                seq_cmp(&a.borrow(), &b.borrow())
            }
            (Value::Tuple(a), Value::Tuple(b)) => seq_cmp(a, b),
            _ => None,
        }
    }
}

fn join_repr(out: &mut String, items: &[Value], depth: usize) {
    for (i, v) in items.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        v.write_repr(out, depth + 1);
    }
}

fn seq_eq(a: &[Value], b: &[Value]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.py_eq(y))
}

fn seq_cmp(a: &[Value], b: &[Value]) -> Option<Ordering> {
    for (x, y) in a.iter().zip(b) {
        if !x.py_eq(y) {
            return x.py_cmp(y);
        }
    }
    Some(a.len().cmp(&b.len()))
}

pub fn range_len(start: i64, stop: i64, step: i64) -> i64 {
    let (start, stop, step) = (start as i128, stop as i128, step as i128);
    let n = if step > 0 && start < stop {
        (stop - start - 1) / step + 1
    } else if step < 0 && start > stop {
        (start - stop - 1) / (-step) + 1
    } else {
        0
    };
    n.min(i64::MAX as i128) as i64
}

pub fn repr_str(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') { '"' } else { '\'' };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c if (c as u32) < 0x20 || c as u32 == 0x7f => {
                out.push_str(&format!("\\x{:02x}", c as u32))
            }
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}
