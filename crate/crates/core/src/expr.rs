//! Jinja-style expression language used inside `${ ... }` markers and in
//! `if`/`until`/`for`/`call` fields.
//!
//! Supports literals, variables, attribute and index access, arithmetic,
//! comparison chains, `and`/`or`/`not`, `in`/`not in`, conditional
//! expressions, a handful of builtin functions and `|` filters.

use std::fmt;

use indexmap::IndexSet;

use crate::value::{canonical_json, stringify, Map, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { message: String, offset: usize },
    #[error("undefined variable `{0}`")]
    Undefined(String),
    #[error("{0}")]
    Type(String),
}

fn type_err<T>(msg: impl Into<String>) -> Result<T, ExprError> {
    Err(ExprError::Type(msg.into()))
}

/// Variable resolution for expression evaluation.
pub trait Lookup {
    fn lookup(&self, name: &str) -> Option<&Value>;
}

impl Lookup for Map {
    fn lookup(&self, name: &str) -> Option<&Value> {
        self.get(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    FloorDiv,
    Mod,
    Pow,
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    In,
    NotIn,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    Lit(Value),
    Var(String),
    List(Vec<Ast>),
    Dict(Vec<(Ast, Ast)>),
    Attr(Box<Ast>, String),
    Index(Box<Ast>, Box<Ast>),
    Call(String, Vec<Ast>),
    Filter(Box<Ast>, String, Vec<Ast>),
    Neg(Box<Ast>),
    Not(Box<Ast>),
    And(Box<Ast>, Box<Ast>),
    Or(Box<Ast>, Box<Ast>),
    Binary(BinOp, Box<Ast>, Box<Ast>),
    Compare(Box<Ast>, Vec<(CmpOp, Ast)>),
    Cond {
        cond: Box<Ast>,
        then: Box<Ast>,
        otherwise: Box<Ast>,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(Value),
    Str(String),
    Ident(String),
    Op(&'static str),
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(v) => write!(f, "{v}"),
            Tok::Str(s) => write!(f, "{s:?}"),
            Tok::Ident(s) => f.write_str(s),
            Tok::Op(s) => f.write_str(s),
            Tok::End => f.write_str("end of expression"),
        }
    }
}

const OPERATORS: [&str; 25] = [
    "**", "//", "==", "!=", "<=", ">=", "<", ">", "+", "-", "*", "/", "%", "~", "(", ")", "[", "]",
    "{", "}", ",", ":", ".", "|", "=",
];

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'_') {
                i += 1;
            }
            let mut is_float = false;
            if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                is_float = true;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    is_float = true;
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = src[start..i].chars().filter(|&ch| ch != '_').collect();
            let v = if is_float {
                Value::Float(text.parse().map_err(|_| syntax("bad number", start))?)
            } else {
                match text.parse::<i64>() {
                    Ok(n) => Value::Int(n),
                    Err(_) => Value::Float(text.parse().map_err(|_| syntax("bad number", start))?),
                }
            };
            out.push((Tok::Num(v), start));
            continue;
        }
        if c == b'"' || c == b'\'' {
            let (s, next) = lex_string(src, i)?;
            out.push((Tok::Str(s), start));
            i = next;
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
            continue;
        }
        match OPERATORS.iter().find(|op| src[i..].starts_with(**op)) {
            Some(op) => {
                out.push((Tok::Op(op), start));
                i += op.len();
            }
            None => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(syntax(format!("unexpected character `{ch}`"), start));
            }
        }
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

fn lex_string(src: &str, start: usize) -> Result<(String, usize), ExprError> {
    let quote = src.as_bytes()[start] as char;
    let mut out = String::new();
    let mut chars = src[start + 1..].char_indices();
    while let Some((off, ch)) = chars.next() {
        match ch {
            c if c == quote => return Ok((out, start + 1 + off + c.len_utf8())),
            '\\' => match chars.next() {
                Some((_, 'n')) => out.push('\n'),
                Some((_, 't')) => out.push('\t'),
                Some((_, 'r')) => out.push('\r'),
                Some((_, '0')) => out.push('\0'),
                Some((_, 'u')) => {
                    let hex: String = (0..4)
                        .filter_map(|_| chars.next().map(|(_, c)| c))
                        .collect();
                    let code = u32::from_str_radix(&hex, 16)
                        .ok()
                        .and_then(char::from_u32)
                        .ok_or_else(|| syntax("bad \\u escape", start + 1 + off))?;
                    out.push(code);
                }
                Some((_, other)) => out.push(other),
                None => break,
            },
            c => out.push(c),
        }
    }
    Err(syntax("unterminated string literal", start))
}

fn syntax(message: impl Into<String>, offset: usize) -> ExprError {
    ExprError::Syntax {
        message: message.into(),
        offset,
    }
}

struct ExprParser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl ExprParser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn is_op(&self, op: &str) -> bool {
        matches!(self.peek(), Tok::Op(o) if *o == op)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn expect_op(&mut self, op: &str) -> Result<(), ExprError> {
        if self.is_op(op) {
            self.bump();
            Ok(())
        } else {
            Err(syntax(
                format!("expected `{op}`, found {}", self.peek()),
                self.offset(),
            ))
        }
    }

    fn expr(&mut self) -> Result<Ast, ExprError> {
        let value = self.or()?;
        if self.is_kw("if") {
            self.bump();
            let cond = self.or()?;
            let otherwise = if self.is_kw("else") {
                self.bump();
                self.expr()?
            } else {
                Ast::Lit(Value::Null)
            };
            return Ok(Ast::Cond {
                cond: Box::new(cond),
                then: Box::new(value),
                otherwise: Box::new(otherwise),
            });
        }
        Ok(value)
    }

    fn or(&mut self) -> Result<Ast, ExprError> {
        let mut lhs = self.and()?;
        while self.is_kw("or") {
            self.bump();
            lhs = Ast::Or(Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Ast, ExprError> {
        let mut lhs = self.not()?;
        while self.is_kw("and") {
            self.bump();
            lhs = Ast::And(Box::new(lhs), Box::new(self.not()?));
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Ast, ExprError> {
        if self.is_kw("not") {
            self.bump();
            return Ok(Ast::Not(Box::new(self.not()?)));
        }
        self.comparison()
    }

    fn cmp_op(&mut self) -> Option<CmpOp> {
        let op = match self.peek() {
            Tok::Op("==") => CmpOp::Eq,
            Tok::Op("!=") => CmpOp::Ne,
            Tok::Op("<") => CmpOp::Lt,
            Tok::Op("<=") => CmpOp::Le,
            Tok::Op(">") => CmpOp::Gt,
            Tok::Op(">=") => CmpOp::Ge,
            Tok::Ident(s) if s == "in" => CmpOp::In,
            Tok::Ident(s) if s == "not" => {
                if matches!(&self.toks[self.pos + 1].0, Tok::Ident(n) if n == "in") {
                    self.bump();
                    CmpOp::NotIn
                } else {
                    return None;
                }
            }
            _ => return None,
        };
        self.bump();
        Some(op)
    }

    fn comparison(&mut self) -> Result<Ast, ExprError> {
        let first = self.concat()?;
        let mut rest = Vec::new();
        while let Some(op) = self.cmp_op() {
            rest.push((op, self.concat()?));
        }
        if rest.is_empty() {
            Ok(first)
        } else {
            Ok(Ast::Compare(Box::new(first), rest))
        }
    }

    fn concat(&mut self) -> Result<Ast, ExprError> {
        let mut lhs = self.additive()?;
        while self.is_op("~") {
            self.bump();
            lhs = Ast::Binary(BinOp::Concat, Box::new(lhs), Box::new(self.additive()?));
        }
        Ok(lhs)
    }

    fn additive(&mut self) -> Result<Ast, ExprError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Tok::Op("+") => BinOp::Add,
                Tok::Op("-") => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Ast::Binary(op, Box::new(lhs), Box::new(self.multiplicative()?));
        }
    }

    fn multiplicative(&mut self) -> Result<Ast, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op("*") => BinOp::Mul,
                Tok::Op("/") => BinOp::Div,
                Tok::Op("//") => BinOp::FloorDiv,
                Tok::Op("%") => BinOp::Mod,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Ast::Binary(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Ast, ExprError> {
        if self.is_op("-") {
            self.bump();
            return Ok(Ast::Neg(Box::new(self.unary()?)));
        }
        if self.is_op("+") {
            self.bump();
            return self.unary();
        }
        let base = self.postfix()?;
        if self.is_op("**") {
            self.bump();
            return Ok(Ast::Binary(
                BinOp::Pow,
                Box::new(base),
                Box::new(self.unary()?),
            ));
        }
        Ok(base)
    }

    fn args(&mut self) -> Result<Vec<Ast>, ExprError> {
        self.expect_op("(")?;
        let mut args = Vec::new();
        while !self.is_op(")") {
            args.push(self.expr()?);
            if !self.is_op(")") {
                self.expect_op(",")?;
            }
        }
        self.expect_op(")")?;
        Ok(args)
    }

    fn ident(&mut self) -> Result<String, ExprError> {
        match self.bump() {
            Tok::Ident(s) => Ok(s),
            other => Err(syntax(
                format!("expected a name, found {other}"),
                self.toks[self.pos.saturating_sub(1)].1,
            )),
        }
    }

    fn postfix(&mut self) -> Result<Ast, ExprError> {
        let mut e = self.primary()?;
        loop {
            if self.is_op(".") {
                self.bump();
                let name = match self.bump() {
                    Tok::Ident(s) => s,
                    Tok::Num(Value::Int(i)) => i.to_string(),
                    other => {
                        return Err(syntax(
                            format!("expected attribute, found {other}"),
                            self.offset(),
                        ))
                    }
                };
                e = Ast::Attr(Box::new(e), name);
            } else if self.is_op("[") {
                self.bump();
                let idx = self.expr()?;
                self.expect_op("]")?;
                e = Ast::Index(Box::new(e), Box::new(idx));
            } else if self.is_op("|") {
                self.bump();
                let name = self.ident()?;
                let args = if self.is_op("(") {
                    self.args()?
                } else {
                    Vec::new()
                };
                e = Ast::Filter(Box::new(e), name, args);
            } else {
                return Ok(e);
            }
        }
    }

    fn primary(&mut self) -> Result<Ast, ExprError> {
        let offset = self.offset();
        match self.bump() {
            Tok::Num(v) => Ok(Ast::Lit(v)),
            Tok::Str(s) => Ok(Ast::Lit(Value::String(s))),
            Tok::Ident(name) => Ok(match name.as_str() {
                "true" | "True" => Ast::Lit(Value::Bool(true)),
                "false" | "False" => Ast::Lit(Value::Bool(false)),
                "none" | "None" | "null" => Ast::Lit(Value::Null),
                _ if self.is_op("(") => Ast::Call(name, self.args()?),
                _ => Ast::Var(name),
            }),
            Tok::Op("(") => {
                let e = self.expr()?;
                self.expect_op(")")?;
                Ok(e)
            }
            Tok::Op("[") => {
                let mut items = Vec::new();
                while !self.is_op("]") {
                    items.push(self.expr()?);
                    if !self.is_op("]") {
                        self.expect_op(",")?;
                    }
                }
                self.bump();
                Ok(Ast::List(items))
            }
            Tok::Op("{") => {
                let mut entries = Vec::new();
                while !self.is_op("}") {
                    let k = self.expr()?;
                    self.expect_op(":")?;
                    let v = self.expr()?;
                    entries.push((k, v));
                    if !self.is_op("}") {
                        self.expect_op(",")?;
                    }
                }
                self.bump();
                Ok(Ast::Dict(entries))
            }
            other => Err(syntax(format!("unexpected {other}"), offset)),
        }
    }
}

/// Parses a single expression.
pub fn parse_expr(src: &str) -> Result<Ast, ExprError> {
    let mut p = ExprParser {
        toks: lex(src)?,
        pos: 0,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(syntax(format!("unexpected {}", p.peek()), p.offset()));
    }
    Ok(e)
}

/// Parses and evaluates `expr` against `scope`.
pub fn eval_expr(expr: &str, scope: &dyn Lookup) -> Result<Value, ExprError> {
    eval(&parse_expr(expr)?, scope)
}

impl Ast {
    /// Free variable names, in first-occurrence order.
    pub fn free_vars(&self) -> IndexSet<String> {
        let mut out = IndexSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut IndexSet<String>) {
        match self {
            Ast::Lit(_) => {}
            Ast::Var(name) => {
                out.insert(name.clone());
            }
            Ast::List(items) | Ast::Call(_, items) => {
                items.iter().for_each(|a| a.collect_vars(out))
            }
            Ast::Dict(entries) => entries.iter().for_each(|(k, v)| {
                k.collect_vars(out);
                v.collect_vars(out);
            }),
            Ast::Attr(e, _) | Ast::Neg(e) | Ast::Not(e) => e.collect_vars(out),
            Ast::Filter(e, _, args) => {
                e.collect_vars(out);
                args.iter().for_each(|a| a.collect_vars(out));
            }
            Ast::Index(a, b) | Ast::And(a, b) | Ast::Or(a, b) | Ast::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Ast::Compare(first, rest) => {
                first.collect_vars(out);
                rest.iter().for_each(|(_, e)| e.collect_vars(out));
            }
            Ast::Cond {
                cond,
                then,
                otherwise,
            } => {
                cond.collect_vars(out);
                then.collect_vars(out);
                otherwise.collect_vars(out);
            }
        }
    }
}

pub fn eval(ast: &Ast, scope: &dyn Lookup) -> Result<Value, ExprError> {
    match ast {
        Ast::Lit(v) => Ok(v.clone()),
        Ast::Var(name) => scope
            .lookup(name)
            .cloned()
            .ok_or_else(|| ExprError::Undefined(name.clone())),
        Ast::List(items) => items
            .iter()
            .map(|a| eval(a, scope))
            .collect::<Result<Vec<_>, _>>()
            .map(Value::Array),
        Ast::Dict(entries) => {
            let mut map = Map::new();
            for (k, v) in entries {
                let key = match eval(k, scope)? {
                    Value::String(s) => s,
                    other => stringify(&other),
                };
                map.insert(key, eval(v, scope)?);
            }
            Ok(Value::Object(map))
        }
        Ast::Attr(target, name) => attribute(&eval(target, scope)?, name),
        Ast::Index(target, idx) => index(&eval(target, scope)?, &eval(idx, scope)?),
        Ast::Call(name, args) => {
            let args = args
                .iter()
                .map(|a| eval(a, scope))
                .collect::<Result<Vec<_>, _>>()?;
            call_builtin(name, &args)
        }
        Ast::Filter(target, name, args) => {
            let mut all = vec![eval(target, scope)?];
            for a in args {
                all.push(eval(a, scope)?);
            }
            apply_filter(name, &all)
        }
        Ast::Neg(e) => match eval(e, scope)? {
            Value::Int(i) => Ok(i
                .checked_neg()
                .map(Value::Int)
                .unwrap_or(Value::Float(-(i as f64)))),
            Value::Float(f) => Ok(Value::Float(-f)),
            other => type_err(format!("cannot negate {}", other.type_name())),
        },
        Ast::Not(e) => Ok(Value::Bool(!eval(e, scope)?.is_truthy())),
        Ast::And(a, b) => {
            let lhs = eval(a, scope)?;
            if lhs.is_truthy() {
                eval(b, scope)
            } else {
                Ok(lhs)
            }
        }
        Ast::Or(a, b) => {
            let lhs = eval(a, scope)?;
            if lhs.is_truthy() {
                Ok(lhs)
            } else {
                eval(b, scope)
            }
        }
        Ast::Binary(op, a, b) => binary(*op, &eval(a, scope)?, &eval(b, scope)?),
        Ast::Compare(first, rest) => {
            let mut lhs = eval(first, scope)?;
            for (op, e) in rest {
                let rhs = eval(e, scope)?;
                if !compare(*op, &lhs, &rhs)? {
                    return Ok(Value::Bool(false));
                }
                lhs = rhs;
            }
            Ok(Value::Bool(true))
        }
        Ast::Cond {
            cond,
            then,
            otherwise,
        } => {
            if eval(cond, scope)?.is_truthy() {
                eval(then, scope)
            } else {
                eval(otherwise, scope)
            }
        }
    }
}

fn attribute(target: &Value, name: &str) -> Result<Value, ExprError> {
    match target {
        Value::Object(map) => map
            .get(name)
            .cloned()
            .ok_or_else(|| ExprError::Type(format!("object has no attribute `{name}`"))),
        Value::Function(closure) => match name {
            "signature" => Ok(Value::String(closure.signature.clone())),
            "name" => Ok(Value::String(closure.name.clone())),
            "params" => Ok(Value::Array(
                closure
                    .params
                    .keys()
                    .map(|k| Value::from(k.as_str()))
                    .collect(),
            )),
            _ => type_err(format!("function has no attribute `{name}`")),
        },
        Value::Array(items) => match name.parse::<i64>() {
            Ok(i) => index(target, &Value::Int(i)),
            Err(_) if name == "length" => Ok(Value::Int(items.len() as i64)),
            Err(_) => type_err(format!("array has no attribute `{name}`")),
        },
        other => type_err(format!("{} has no attribute `{name}`", other.type_name())),
    }
}

fn normalize_index(i: i64, len: usize) -> Option<usize> {
    let idx = if i < 0 { len as i64 + i } else { i };
    (0..len as i64).contains(&idx).then_some(idx as usize)
}

fn index(target: &Value, idx: &Value) -> Result<Value, ExprError> {
    match (target, idx) {
        (Value::Array(items), Value::Int(i)) => normalize_index(*i, items.len())
            .map(|k| items[k].clone())
            .ok_or_else(|| {
                ExprError::Type(format!(
                    "index {i} out of range for array of length {}",
                    items.len()
                ))
            }),
        (Value::String(s), Value::Int(i)) => {
            let chars: Vec<char> = s.chars().collect();
            normalize_index(*i, chars.len())
                .map(|k| Value::String(chars[k].to_string()))
                .ok_or_else(|| ExprError::Type(format!("index {i} out of range for string")))
        }
        (Value::Object(_) | Value::Function(_), Value::String(key)) => attribute(target, key),
        (t, i) => type_err(format!(
            "cannot index {} with {}",
            t.type_name(),
            i.type_name()
        )),
    }
}

fn binary(op: BinOp, a: &Value, b: &Value) -> Result<Value, ExprError> {
    use Value::{Array, Float, Int};
    if op == BinOp::Concat {
        return Ok(Value::String(stringify(a) + &stringify(b)));
    }
    match (op, a, b) {
        (BinOp::Add, Value::String(x), Value::String(y)) => {
            return Ok(Value::String(format!("{x}{y}")))
        }
        (BinOp::Add, Array(x), Array(y)) => {
            return Ok(Array(x.iter().chain(y.iter()).cloned().collect()))
        }
        (BinOp::Mul, Value::String(s), Int(n)) | (BinOp::Mul, Int(n), Value::String(s)) => {
            return Ok(Value::String(s.repeat((*n).max(0) as usize)))
        }
        (BinOp::Mul, Array(items), Int(n)) | (BinOp::Mul, Int(n), Array(items)) => {
            let mut out = Vec::new();
            for _ in 0..(*n).max(0) {
                out.extend(items.iter().cloned());
            }
            return Ok(Array(out));
        }
        _ => {}
    }
    let (Some(x), Some(y)) = (a.as_f64(), b.as_f64()) else {
        return type_err(format!(
            "unsupported operand types for {op:?}: {} and {}",
            a.type_name(),
            b.type_name()
        ));
    };
    if let (Int(i), Int(j)) = (a, b) {
        let exact = match op {
            BinOp::Add => i.checked_add(*j),
            BinOp::Sub => i.checked_sub(*j),
            BinOp::Mul => i.checked_mul(*j),
            BinOp::FloorDiv | BinOp::Mod if *j == 0 => return type_err("division by zero"),
            BinOp::FloorDiv => Some(
                i.div_euclid(*j)
                    - if *j < 0 && i.rem_euclid(*j) != 0 {
                        1
                    } else {
                        0
                    },
            ),
            BinOp::Mod => Some(((i % j) + j) % j),
            BinOp::Pow if *j >= 0 => u32::try_from(*j).ok().and_then(|e| i.checked_pow(e)),
            _ => None,
        };
        if let Some(v) = exact {
            return Ok(Int(v));
        }
    }
    let r = match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div | BinOp::FloorDiv | BinOp::Mod if y == 0.0 => {
            return type_err("division by zero")
        }
        BinOp::Div => x / y,
        BinOp::FloorDiv => (x / y).floor(),
        BinOp::Mod => x - y * (x / y).floor(),
        BinOp::Pow => x.powf(y),
        BinOp::Concat => unreachable!("handled above"),
    };
    Ok(Float(r))
}

fn ordering(a: &Value, b: &Value) -> Result<std::cmp::Ordering, ExprError> {
    match (a, b) {
        (Value::String(x), Value::String(y)) => Ok(x.cmp(y)),
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => x
                .partial_cmp(&y)
                .ok_or_else(|| ExprError::Type("cannot order NaN".into())),
            _ => type_err(format!(
                "cannot compare {} with {}",
                a.type_name(),
                b.type_name()
            )),
        },
    }
}

fn compare(op: CmpOp, a: &Value, b: &Value) -> Result<bool, ExprError> {
    use std::cmp::Ordering::*;
    Ok(match op {
        CmpOp::Eq => a == b,
        CmpOp::Ne => a != b,
        CmpOp::Lt => ordering(a, b)? == Less,
        CmpOp::Le => ordering(a, b)? != Greater,
        CmpOp::Gt => ordering(a, b)? == Greater,
        CmpOp::Ge => ordering(a, b)? != Less,
        CmpOp::In => contains(b, a)?,
        CmpOp::NotIn => !contains(b, a)?,
    })
}

fn contains(container: &Value, item: &Value) -> Result<bool, ExprError> {
    match (container, item) {
        (Value::String(s), Value::String(sub)) => Ok(s.contains(sub.as_str())),
        (Value::Array(items), x) => Ok(items.contains(x)),
        (Value::Object(m), Value::String(k)) => Ok(m.contains_key(k)),
        (c, i) => type_err(format!(
            "`in` not supported between {} and {}",
            i.type_name(),
            c.type_name()
        )),
    }
}

fn length(v: &Value) -> Result<Value, ExprError> {
    match v {
        Value::String(s) => Ok(Value::Int(s.chars().count() as i64)),
        Value::Array(a) => Ok(Value::Int(a.len() as i64)),
        Value::Object(m) => Ok(Value::Int(m.len() as i64)),
        other => type_err(format!("{} has no length", other.type_name())),
    }
}

fn to_int(v: &Value) -> Result<Value, ExprError> {
    match v {
        Value::Int(i) => Ok(Value::Int(*i)),
        Value::Float(f) => Ok(Value::Int(f.trunc() as i64)),
        Value::Bool(b) => Ok(Value::Int(*b as i64)),
        Value::String(s) => s
            .trim()
            .parse::<i64>()
            .map(Value::Int)
            .or_else(|_| type_err(format!("cannot convert {s:?} to integer"))),
        other => type_err(format!("cannot convert {} to integer", other.type_name())),
    }
}

fn to_float(v: &Value) -> Result<Value, ExprError> {
    match v {
        Value::String(s) => s
            .trim()
            .parse::<f64>()
            .map(Value::Float)
            .or_else(|_| type_err(format!("cannot convert {s:?} to number"))),
        Value::Bool(b) => Ok(Value::Float(*b as i64 as f64)),
        other => other.as_f64().map(Value::Float).ok_or_else(|| {
            ExprError::Type(format!("cannot convert {} to number", other.type_name()))
        }),
    }
}

fn arity(name: &str, args: &[Value], expected: usize) -> Result<(), ExprError> {
    if args.len() == expected {
        Ok(())
    } else {
        type_err(format!(
            "`{name}` takes {expected} argument(s), got {}",
            args.len()
        ))
    }
}

fn call_builtin(name: &str, args: &[Value]) -> Result<Value, ExprError> {
    match name {
        "len" => {
            arity(name, args, 1)?;
            length(&args[0])
        }
        "str" => {
            arity(name, args, 1)?;
            Ok(Value::String(stringify(&args[0])))
        }
        "int" => {
            arity(name, args, 1)?;
            to_int(&args[0])
        }
        "float" => {
            arity(name, args, 1)?;
            to_float(&args[0])
        }
        "bool" => {
            arity(name, args, 1)?;
            Ok(Value::Bool(args[0].is_truthy()))
        }
        "abs" => {
            arity(name, args, 1)?;
            match &args[0] {
                Value::Int(i) => Ok(Value::Int(i.abs())),
                Value::Float(f) => Ok(Value::Float(f.abs())),
                other => type_err(format!("abs of {}", other.type_name())),
            }
        }
        "range" => {
            let nums: Vec<i64> = args
                .iter()
                .map(|a| match a {
                    Value::Int(i) => Ok(*i),
                    other => type_err(format!("range expects integers, got {}", other.type_name())),
                })
                .collect::<Result<_, _>>()?;
            let (start, stop, step) = match nums.as_slice() {
                [stop] => (0, *stop, 1),
                [start, stop] => (*start, *stop, 1),
                [start, stop, step] if *step != 0 => (*start, *stop, *step),
                _ => return type_err("range takes 1 to 3 integer arguments with a non-zero step"),
            };
            let mut out = Vec::new();
            let mut i = start;
            while (step > 0 && i < stop) || (step < 0 && i > stop) {
                out.push(Value::Int(i));
                i += step;
            }
            Ok(Value::Array(out))
        }
        "min" | "max" => {
            let items: Vec<Value> = match args {
                [Value::Array(items)] => items.clone(),
                _ => args.to_vec(),
            };
            let mut best: Option<Value> = None;
            for item in items {
                best = Some(match best {
                    None => item,
                    Some(b) => {
                        let ord = ordering(&item, &b)?;
                        let take = if name == "min" {
                            ord.is_lt()
                        } else {
                            ord.is_gt()
                        };
                        if take {
                            item
                        } else {
                            b
                        }
                    }
                });
            }
            best.ok_or_else(|| ExprError::Type(format!("{name} of empty sequence")))
        }
        _ => type_err(format!(
            "unknown function `{name}` (PDL functions are invoked with a call block)"
        )),
    }
}

fn apply_filter(name: &str, args: &[Value]) -> Result<Value, ExprError> {
    let target = &args[0];
    let extra = &args[1..];
    match name {
        "length" | "count" => length(target),
        "upper" => Ok(Value::String(stringify(target).to_uppercase())),
        "lower" => Ok(Value::String(stringify(target).to_lowercase())),
        "trim" => Ok(Value::String(stringify(target).trim().to_string())),
        "string" => Ok(Value::String(stringify(target))),
        "int" => to_int(target),
        "float" => to_float(target),
        "tojson" => Ok(Value::String(canonical_json(target))),
        "default" => Ok(if target.is_null() {
            extra.first().cloned().unwrap_or(Value::Null)
        } else {
            target.clone()
        }),
        "join" => {
            let sep = extra.first().map(stringify).unwrap_or_default();
            match target {
                Value::Array(items) => Ok(Value::String(
                    items.iter().map(stringify).collect::<Vec<_>>().join(&sep),
                )),
                other => type_err(format!("join expects an array, got {}", other.type_name())),
            }
        }
        "first" | "last" => match target {
            Value::Array(items) => Ok(if name == "first" {
                items.first()
            } else {
                items.last()
            }
            .cloned()
            .unwrap_or(Value::Null)),
            other => type_err(format!(
                "{name} expects an array, got {}",
                other.type_name()
            )),
        },
        "keys" => match target {
            Value::Object(m) => Ok(Value::Array(
                m.keys().map(|k| Value::from(k.as_str())).collect(),
            )),
            other => type_err(format!("keys expects an object, got {}", other.type_name())),
        },
        _ => type_err(format!("unknown filter `{name}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scope(json: &str) -> Map {
        match Value::from_json_str(json).unwrap() {
            Value::Object(m) => m,
            _ => panic!("scope must be an object"),
        }
    }

    fn actions() -> Map {
        scope(
            r#"{"actions": [{"name": "search", "arguments": {"topic": "circumference of Earth"}}]}"#,
        )
    }

    #[test]
    fn action_condition_true() {
        let v = eval_expr(r#"actions[0].name == "search""#, &actions()).unwrap();
        assert_eq!(v, Value::Bool(true));
    }

    #[test]
    fn action_condition_false_for_other_tool() {
        let s = scope(r#"{"actions": [{"name": "lookup"}]}"#);
        assert_eq!(
            eval_expr(r#"actions[0].name == "search""#, &s).unwrap(),
            Value::Bool(false)
        );
    }

    #[test]
    fn length_builtin_and_filter_agree() {
        let s = Map::new();
        assert_eq!(eval_expr("len([1,2,3])", &s).unwrap(), Value::Int(3));
        assert_eq!(eval_expr("[1,2,3] | length", &s).unwrap(), Value::Int(3));
    }

    #[test]
    fn arithmetic() {
        let s = Map::new();
        assert_eq!(eval_expr("1 + 1", &s).unwrap(), Value::Int(2));
        assert_eq!(eval_expr("7 // 2", &s).unwrap(), Value::Int(3));
        assert_eq!(eval_expr("-7 // 2", &s).unwrap(), Value::Int(-4));
        assert_eq!(eval_expr("-7 % 3", &s).unwrap(), Value::Int(2));
        assert_eq!(eval_expr("7 / 2", &s).unwrap(), Value::Float(3.5));
        assert_eq!(eval_expr("2 ** 10", &s).unwrap(), Value::Int(1024));
        assert_eq!(eval_expr("1 + 2 * 3", &s).unwrap(), Value::Int(7));
        assert_eq!(eval_expr("'a' ~ 1", &s).unwrap(), Value::from("a1"));
        assert!(matches!(eval_expr("1 / 0", &s), Err(ExprError::Type(_))));
    }

    #[test]
    fn boolean_ops_and_membership() {
        let s = actions();
        assert_eq!(
            eval_expr("'topic' in actions[0].arguments", &s).unwrap(),
            Value::Bool(true)
        );
        assert_eq!(eval_expr("3 not in [1, 2]", &s).unwrap(), Value::Bool(true));
        assert_eq!(
            eval_expr("not [] and 1 < 2 < 3", &s).unwrap(),
            Value::Bool(true)
        );
        assert_eq!(
            eval_expr("'x' if false else 'y'", &s).unwrap(),
            Value::from("y")
        );
    }

    #[test]
    fn undefined_variable_is_an_error() {
        assert_eq!(
            eval_expr("missing + 1", &Map::new()),
            Err(ExprError::Undefined("missing".into()))
        );
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(parse_expr("1 +"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse_expr("(1"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse_expr("a b"), Err(ExprError::Syntax { .. })));
    }

    #[test]
    fn literals() {
        let s = Map::new();
        assert_eq!(
            eval_expr(r#"{"a": [1, 2.5, "x\n"], "b": none}"#, &s).unwrap(),
            Value::from_json_str(r#"{"a": [1, 2.5, "x\n"], "b": null}"#).unwrap()
        );
        assert_eq!(eval_expr("[10, 20][-1]", &s).unwrap(), Value::Int(20));
    }

    #[test]
    fn free_vars_in_order() {
        let ast = parse_expr("a.b + c[d] | join(sep)").unwrap();
        let vars: Vec<_> = ast.free_vars().into_iter().collect();
        assert_eq!(vars, ["a", "c", "d", "sep"]);
    }

    #[test]
    fn filters() {
        let s = scope(r#"{"xs": ["a", "b"], "t": "  Hi "}"#);
        assert_eq!(
            eval_expr("xs | join(', ')", &s).unwrap(),
            Value::from("a, b")
        );
        assert_eq!(
            eval_expr("t | trim | upper", &s).unwrap(),
            Value::from("HI")
        );
        assert_eq!(
            eval_expr("xs | tojson", &s).unwrap(),
            Value::from(r#"["a", "b"]"#)
        );
        assert_eq!(
            eval_expr("range(3)", &s).unwrap(),
            Value::from_json_str("[0,1,2]").unwrap()
        );
    }
}
