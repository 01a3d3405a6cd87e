//! `${ expr }` interpolation.
//!
//! `$${` escapes a literal `${`. A string consisting of exactly one marker
//! keeps the expression's value instead of stringifying it.

use crate::expr::{eval_expr, parse_expr, ExprError, Lookup};
use crate::value::{stringify, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Text(String),
    Expr(String),
}

/// Splits a template into literal text and expression sources.
pub fn segments(s: &str) -> Result<Vec<Segment>, ExprError> {
    let mut out = Vec::new();
    let mut text = String::new();
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if s[i..].starts_with("$${") {
            text.push_str("${");
            i += 3;
            continue;
        }
        if s[i..].starts_with("${") {
            let start = i + 2;
            let end = closing_brace(s, start).ok_or(ExprError::Syntax {
                message: "unterminated `${`".into(),
                offset: i,
            })?;
            if !text.is_empty() {
                out.push(Segment::Text(std::mem::take(&mut text)));
            }
            out.push(Segment::Expr(s[start..end].trim().to_string()));
            i = end + 1;
            continue;
        }
        let ch = s[i..].chars().next().expect("in bounds");
        text.push(ch);
        i += ch.len_utf8();
    }
    if !text.is_empty() {
        out.push(Segment::Text(text));
    }
    Ok(out)
}

/// Byte offset of the `}` closing a marker whose body starts at `from`.
fn closing_brace(s: &str, from: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (off, ch) in s[from..].char_indices() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == q {
                quote = None;
            }
            continue;
        }
        match ch {
            '"' | '\'' => quote = Some(ch),
            '{' | '[' | '(' => depth += 1,
            ')' | ']' => depth = depth.saturating_sub(1),
            '}' if depth == 0 => return Some(from + off),
            '}' => depth -= 1,
            _ => {}
        }
    }
    None
}

pub fn has_markers(s: &str) -> bool {
    s.contains("${")
}

/// Substitutes every marker with the stringified expression value.
pub fn render_template(s: &str, scope: &dyn Lookup) -> Result<String, ExprError> {
    if !has_markers(s) {
        return Ok(s.to_string());
    }
    let mut out = String::new();
    for seg in segments(s)? {
        match seg {
            Segment::Text(t) => out.push_str(&t),
            Segment::Expr(e) => out.push_str(&stringify(&eval_expr(&e, scope)?)),
        }
    }
    Ok(out)
}

/// Like [`render_template`], but a lone marker yields the raw value.
pub fn expand_template(s: &str, scope: &dyn Lookup) -> Result<Value, ExprError> {
    if !has_markers(s) {
        return Ok(Value::String(s.to_string()));
    }
    let segs = segments(s)?;
    if let [Segment::Expr(e)] = segs.as_slice() {
        return eval_expr(e, scope);
    }
    render_template(s, scope).map(Value::String)
}

/// Expands strings nested anywhere inside `v`. Object keys are left alone.
pub fn expand_value(v: &Value, scope: &dyn Lookup) -> Result<Value, ExprError> {
    Ok(match v {
        Value::String(s) => expand_template(s, scope)?,
        Value::Array(items) => Value::Array(
            items
                .iter()
                .map(|x| expand_value(x, scope))
                .collect::<Result<_, _>>()?,
        ),
        Value::Object(map) => {
            let mut out = crate::value::Map::new();
            for (k, x) in map {
                out.insert(k.clone(), expand_value(x, scope)?);
            }
            Value::Object(out)
        }
        other => other.clone(),
    })
}

/// Source of an expression field: accepts both `${ e }` and bare `e`.
pub fn expression_source(s: &str) -> &str {
    let t = s.trim();
    if let Some(inner) = t.strip_prefix("${").and_then(|r| r.strip_suffix('}')) {
        if closing_brace(t, 2) == Some(t.len() - 1) {
            return inner.trim();
        }
    }
    t
}

/// Evaluates an expression field (`if`, `until`, `for ... in`, `call`).
pub fn eval_field(s: &str, scope: &dyn Lookup) -> Result<Value, ExprError> {
    eval_expr(expression_source(s), scope)
}

/// Names referenced by the markers in `s`.
pub fn template_free_vars(s: &str) -> Result<Vec<String>, ExprError> {
    let mut out = Vec::new();
    for seg in segments(s)? {
        if let Segment::Expr(e) = seg {
            out.extend(parse_expr(&e)?.free_vars());
        }
    }
    Ok(out)
}
