//! YAML text to [`Program`].
//!
//! Block kinds are inferred from a single discriminator key. All problems in
//! a file are collected as [`ParseDiagnostic`]s rather than stopping at the
//! first one.

use std::fmt;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::ast::{
    Block, BlockKind, CodeLang, Expr, ForClause, FunctionBlock, JoinMode, ModelBlock, ParserKind,
    Program, ReadSource, RepeatBlock,
};
use crate::types::{parse_type_expr, TypeExpr};
use crate::value::{Map, Role, Value};
use crate::yaml::{self, key_text, Node, NodeKind, Span};

/// Keys that select a block kind, paired with the kind they select.
pub const DISCRIMINATORS: [(&str, &str); 13] = [
    ("text", "text"),
    ("lastOf", "lastOf"),
    ("array", "array"),
    ("content", "message"),
    ("model", "model"),
    ("code", "code"),
    ("if", "if"),
    ("repeat", "repeat"),
    ("data", "data"),
    ("function", "function"),
    ("call", "call"),
    ("import", "import"),
    ("read", "read"),
];

/// Keys valid on every block.
pub const ENVELOPE_KEYS: [&str; 4] = ["def", "spec", "role", "description"];

/// Extra keys each kind accepts besides its discriminator and the envelope.
pub fn kind_keys(kind: &str) -> &'static [&'static str] {
    match kind {
        "model" => &["parameters", "input", "parser"],
        "code" => &["lang"],
        "if" => &["then", "else"],
        "repeat" => &["for", "until", "maxIterations", "join"],
        "data" => &["raw"],
        "function" => &["return"],
        "call" => &["args"],
        "read" => &["message"],
        _ => &[],
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SourceSpan {
    pub file: PathBuf,
    pub start_line: usize,
    pub start_col: usize,
    pub end_line: usize,
    pub end_col: usize,
}

impl SourceSpan {
    pub fn from_span(file: &Path, span: Span) -> Self {
        SourceSpan {
            file: file.to_path_buf(),
            start_line: span.start.line,
            start_col: span.start.col,
            end_line: span.end.line,
            end_col: span.end.col,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostic {
    pub severity: Severity,
    pub message: String,
    pub span: SourceSpan,
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(
            f,
            "{}:{}:{}: {sev}: {}",
            self.span.file.display(),
            self.span.start_line,
            self.span.start_col,
            self.message
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KindError {
    #[error("no block kind: expected one of {}", DISCRIMINATORS.map(|d| d.0).join(", "))]
    NoKind,
    #[error("ambiguous block kind: keys {} each select a kind", .0.join(", "))]
    Ambiguous(Vec<String>),
}

/// Picks the block kind from a mapping's keys.
pub fn infer_block_kind<'a>(
    keys: impl IntoIterator<Item = &'a str>,
) -> Result<&'static str, KindError> {
    let mut found: Vec<(&str, &'static str)> = Vec::new();
    for key in keys {
        if let Some((k, kind)) = DISCRIMINATORS.iter().find(|(k, _)| *k == key) {
            found.push((k, kind));
        }
    }
    match found.as_slice() {
        [] => Err(KindError::NoKind),
        [(_, kind)] => Ok(kind),
        many => Err(KindError::Ambiguous(
            many.iter().map(|(k, _)| format!("`{k}`")).collect(),
        )),
    }
}

struct Ctx<'a> {
    file: &'a Path,
    diags: Vec<ParseDiagnostic>,
}

impl Ctx<'_> {
    fn error(&mut self, span: Span, message: impl Into<String>) {
        self.diags.push(ParseDiagnostic {
            severity: Severity::Error,
            message: message.into(),
            span: SourceSpan::from_span(self.file, span),
        });
    }

    fn string(&mut self, node: &Node, what: &str) -> Option<String> {
        match node.as_str() {
            Some(s) => Some(s.to_string()),
            None => {
                self.error(node.span, format!("`{what}` must be a string"));
                None
            }
        }
    }

    fn expr(&mut self, node: &Node, what: &str) -> Option<Expr> {
        match &node.kind {
            NodeKind::Scalar { text, .. } if !text.is_empty() => Some(Expr::new(text.clone())),
            _ => {
                self.error(node.span, format!("`{what}` must be an expression string"));
                None
            }
        }
    }

    fn identifier(&mut self, node: &Node, what: &str) -> Option<String> {
        let name = self.string(node, what)?;
        if is_identifier(&name) {
            Some(name)
        } else {
            self.error(node.span, format!("`{name}` is not a valid identifier"));
            None
        }
    }

    fn type_expr(&mut self, node: &Node) -> Option<TypeExpr> {
        match parse_type_expr(&node.to_value()) {
            Ok(t) => Some(t),
            Err(e) => {
                self.error(node.span, e.to_string());
                None
            }
        }
    }
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Mapping entries keyed by text, reporting duplicates.
fn entries<'n>(cx: &mut Ctx, pairs: &'n [(Node, Node)]) -> IndexMap<String, (&'n Node, &'n Node)> {
    let mut out = IndexMap::new();
    for (k, v) in pairs {
        let key = key_text(k);
        if out.contains_key(&key) {
            cx.error(k.span, format!("duplicate key `{key}`"));
            continue;
        }
        out.insert(key, (k, v));
    }
    out
}

/// Parses a whole program. Warnings are dropped; use [`parse_program_with_warnings`]
/// to keep them.
pub fn parse_program(text: &str, source_path: &Path) -> Result<Program, Vec<ParseDiagnostic>> {
    parse_program_with_warnings(text, source_path).map(|(p, _)| p)
}

pub fn parse_program_with_warnings(
    text: &str,
    source_path: &Path,
) -> Result<(Program, Vec<ParseDiagnostic>), Vec<ParseDiagnostic>> {
    let mut cx = Ctx {
        file: source_path,
        diags: Vec::new(),
    };
    let root_node = match yaml::load(text) {
        Ok(n) => n,
        Err(e) => {
            cx.error(
                Span {
                    start: e.pos,
                    end: e.pos,
                },
                format!("YAML syntax error: {}", e.message),
            );
            return Err(cx.diags);
        }
    };
    let mut description = None;
    let mut defs = IndexMap::new();
    let root = match &root_node.kind {
        NodeKind::Map(pairs) => {
            let mut rest = Vec::new();
            for (k, v) in pairs {
                match key_text(k).as_str() {
                    "defs" => parse_defs(&mut cx, v, &mut defs),
                    "description" if !has_discriminator(pairs) => {
                        description = cx.string(v, "description");
                    }
                    _ => rest.push((k.clone(), v.clone())),
                }
            }
            if pairs.is_empty() {
                parse_block(&mut cx, &root_node)
            } else if rest.is_empty() {
                Some(Block::new(BlockKind::Data {
                    data: Value::Null,
                    raw: true,
                }))
            } else {
                let node = Node {
                    kind: NodeKind::Map(rest),
                    span: root_node.span,
                };
                let block = parse_block(&mut cx, &node);
                if let Some(b) = &block {
                    description = description.or_else(|| b.description.clone());
                }
                block
            }
        }
        NodeKind::Scalar { .. } if root_node.to_value().is_null() => {
            cx.error(root_node.span, "empty program");
            None
        }
        NodeKind::Scalar { .. } => parse_block(&mut cx, &root_node).map(|b| match b.kind {
            BlockKind::Literal(_) => Block::text(vec![b]),
            _ => b,
        }),
        NodeKind::Seq(_) => {
            let parts = parse_parts(&mut cx, &root_node);
            Some(Block::text(parts))
        }
    };
    if cx.diags.iter().any(|d| d.severity == Severity::Error) {
        return Err(cx.diags);
    }
    let program = Program {
        description,
        defs,
        root: root.expect("root parsed without errors"),
        source_path: source_path.to_path_buf(),
    };
    Ok((program, cx.diags))
}

fn has_discriminator(pairs: &[(Node, Node)]) -> bool {
    pairs
        .iter()
        .any(|(k, _)| DISCRIMINATORS.iter().any(|(d, _)| *d == key_text(k)))
}

fn parse_defs(cx: &mut Ctx, node: &Node, defs: &mut IndexMap<String, Block>) {
    let Some(pairs) = node.as_map() else {
        cx.error(node.span, "`defs` must be a mapping from names to blocks");
        return;
    };
    for (name, (k, v)) in entries(cx, pairs) {
        if !is_identifier(&name) {
            cx.error(k.span, format!("`{name}` is not a valid identifier"));
            continue;
        }
        if let Some(b) = parse_block(cx, v) {
            defs.insert(name, b);
        }
    }
}

fn parse_parts(cx: &mut Ctx, node: &Node) -> Vec<Block> {
    match &node.kind {
        NodeKind::Seq(items) => items.iter().filter_map(|n| parse_block(cx, n)).collect(),
        _ => parse_block(cx, node).into_iter().collect(),
    }
}

/// Parses one block node: a scalar literal or a mapping with a discriminator.
pub fn parse_block_node(node: &Node, file: &Path) -> Result<Block, Vec<ParseDiagnostic>> {
    let mut cx = Ctx {
        file,
        diags: Vec::new(),
    };
    match parse_block(&mut cx, node) {
        Some(b) if !cx.diags.iter().any(|d| d.severity == Severity::Error) => Ok(b),
        _ => Err(cx.diags),
    }
}

fn parse_block(cx: &mut Ctx, node: &Node) -> Option<Block> {
    let pairs = match &node.kind {
        NodeKind::Map(pairs) => pairs,
        NodeKind::Scalar { .. } => {
            let mut block = match node.to_value() {
                Value::String(s) => Block::literal(s),
                other => Block::raw_data(other),
            };
            block.span = Some(node.span);
            return Some(block);
        }
        NodeKind::Seq(_) => {
            cx.error(
                node.span,
                "a list is not a block; wrap it in `text:`, `lastOf:` or `array:`",
            );
            return None;
        }
    };
    let fields = entries(cx, pairs);
    let kind_name = match infer_block_kind(fields.keys().map(String::as_str)) {
        Ok(k) => k,
        Err(e) => {
            cx.error(node.span, e.to_string());
            return None;
        }
    };
    let discriminator = DISCRIMINATORS
        .iter()
        .find(|(_, k)| *k == kind_name)
        .map(|(d, _)| *d)
        .expect("known kind");
    let allowed = kind_keys(kind_name);
    let mut ok = true;
    for (key, (k, _)) in &fields {
        if key != discriminator
            && !ENVELOPE_KEYS.contains(&key.as_str())
            && !allowed.contains(&key.as_str())
        {
            cx.error(k.span, format!("unknown key `{key}` in {kind_name} block"));
            ok = false;
        }
    }
    let get = |key: &str| fields.get(key).map(|(_, v)| *v);

    let mut block = Block::new(BlockKind::Data {
        data: Value::Null,
        raw: true,
    });
    block.span = Some(node.span);
    if let Some(v) = get("def") {
        block.def = cx.identifier(v, "def");
    }
    if let Some(v) = get("spec") {
        block.spec = cx.type_expr(v);
        ok &= block.spec.is_some();
    }
    if let Some(v) = get("role") {
        match v.as_str().and_then(Role::parse) {
            Some(r) => block.role = Some(r),
            None => {
                cx.error(
                    v.span,
                    "`role` must be one of system, user, assistant, tool",
                );
                ok = false;
            }
        }
    }
    if let Some(v) = get("description") {
        block.description = cx.string(v, "description");
    }

    let body = get(discriminator).expect("discriminator present");
    let kind = match kind_name {
        "text" => Some(BlockKind::Text(parse_parts(cx, body))),
        "lastOf" => Some(BlockKind::LastOf(parse_parts(cx, body))),
        "array" => Some(BlockKind::Array(parse_parts(cx, body))),
        "message" => parse_block(cx, body).map(|content| BlockKind::Message {
            content: Box::new(content),
        }),
        "model" => parse_model(cx, body, &get),
        "code" => parse_code(cx, body, get("lang")),
        "if" => parse_if(cx, node, body, get("then"), get("else")),
        "repeat" => parse_repeat(cx, node, body, &get),
        "data" => {
            let raw = match get("raw") {
                None => Some(false),
                Some(v) => match v.to_value() {
                    Value::Bool(b) => Some(b),
                    _ => {
                        cx.error(v.span, "`raw` must be a boolean");
                        None
                    }
                },
            };
            raw.map(|raw| BlockKind::Data {
                data: body.to_value(),
                raw,
            })
        }
        "function" => parse_function(cx, node, body, get("return")),
        "call" => parse_call(cx, body, get("args")),
        "import" => cx
            .string(body, "import")
            .map(|path| BlockKind::Import { path }),
        "read" => {
            let source = match body.to_value() {
                Value::Null => Some(ReadSource::Stdin),
                Value::String(s) if s == "stdin" => Some(ReadSource::Stdin),
                Value::String(s) => Some(ReadSource::File(s)),
                _ => {
                    cx.error(body.span, "`read` must be null, `stdin` or a file path");
                    None
                }
            };
            let message = get("message").and_then(|m| cx.string(m, "message"));
            source.map(|source| BlockKind::Read { source, message })
        }
        _ => unreachable!("every discriminator is handled"),
    };
    block.kind = kind?;
    ok.then_some(block)
}

fn parse_model<'n>(
    cx: &mut Ctx,
    body: &Node,
    get: &dyn Fn(&str) -> Option<&'n Node>,
) -> Option<BlockKind> {
    let model = match body.scalar_text() {
        Some(t) if matches!(body.to_value(), Value::String(_)) => t.to_string(),
        _ => {
            cx.error(body.span, "`model` must be a string");
            return None;
        }
    };
    let parameters = match get("parameters") {
        None => None,
        Some(p) => match p.to_value() {
            Value::Object(m) => Some(m),
            Value::Null => None,
            _ => {
                cx.error(p.span, "`parameters` must be a mapping");
                return None;
            }
        },
    };
    let input = match get("input") {
        None => None,
        Some(n) => Some(Box::new(parse_block(cx, n)?)),
    };
    let parser = match get("parser") {
        None => ParserKind::None,
        Some(p) => match p.as_str().and_then(ParserKind::parse) {
            Some(k) => k,
            None => {
                cx.error(p.span, "`parser` must be one of json, yaml, none");
                return None;
            }
        },
    };
    Some(BlockKind::Model(ModelBlock {
        model,
        parameters,
        input,
        parser,
    }))
}

fn parse_code(cx: &mut Ctx, body: &Node, lang: Option<&Node>) -> Option<BlockKind> {
    let code = cx.string(body, "code")?;
    let lang = match lang {
        None => CodeLang::Python,
        Some(l) => match l.as_str().and_then(CodeLang::parse) {
            Some(x) => x,
            None => {
                cx.error(l.span, "`lang` must be one of python, jinja, command");
                return None;
            }
        },
    };
    Some(BlockKind::Code { lang, code })
}

fn parse_if(
    cx: &mut Ctx,
    node: &Node,
    cond: &Node,
    then: Option<&Node>,
    otherwise: Option<&Node>,
) -> Option<BlockKind> {
    let condition = cx.expr(cond, "if");
    let Some(then) = then else {
        cx.error(node.span, "`if` block needs a `then` branch");
        return None;
    };
    let then = parse_block(cx, then);
    let otherwise = match otherwise {
        None => None,
        Some(n) => Some(Box::new(parse_block(cx, n)?)),
    };
    Some(BlockKind::If {
        condition: condition?,
        then: Box::new(then?),
        otherwise,
    })
}

fn parse_repeat<'n>(
    cx: &mut Ctx,
    node: &Node,
    body: &Node,
    get: &dyn Fn(&str) -> Option<&'n Node>,
) -> Option<BlockKind> {
    let for_each = match get("for") {
        None => None,
        Some(f) => Some(parse_for(cx, f)?),
    };
    let until = match get("until") {
        None => None,
        Some(u) => Some(cx.expr(u, "until")?),
    };
    if for_each.is_none() && until.is_none() {
        cx.error(node.span, "`repeat` needs `for`, `until` or both");
        return None;
    }
    let max_iterations = match get("maxIterations") {
        None => None,
        Some(m) => match m.to_value() {
            Value::Int(n) if n >= 1 => Some(n as usize),
            Value::Int(_) => {
                cx.error(m.span, "`maxIterations` must be at least 1");
                return None;
            }
            _ => {
                cx.error(m.span, "`maxIterations` must be an integer");
                return None;
            }
        },
    };
    let join = match get("join") {
        None => JoinMode::default(),
        Some(j) => match j.as_str().and_then(JoinMode::parse) {
            Some(x) => x,
            None => {
                cx.error(j.span, "`join` must be one of lastOf, array, text");
                return None;
            }
        },
    };
    let body = parse_block(cx, body)?;
    Some(BlockKind::Repeat(RepeatBlock {
        for_each,
        until,
        max_iterations,
        join,
        body: Box::new(body),
    }))
}

fn parse_for(cx: &mut Ctx, node: &Node) -> Option<ForClause> {
    let Some(pairs) = node.as_map() else {
        cx.error(node.span, "`for` must be a mapping like `{i: \"${ xs }\"}`");
        return None;
    };
    let fields = entries(cx, pairs);
    let mut names: Vec<&str> = fields.keys().map(String::as_str).collect();
    names.sort_unstable();
    if names == ["in", "var"] {
        let var = cx.identifier(fields["var"].1, "var")?;
        let iterable = cx.expr(fields["in"].1, "in")?;
        return Some(ForClause { var, iterable });
    }
    if fields.len() != 1 {
        cx.error(node.span, "`for` must bind exactly one loop variable");
        return None;
    }
    let (name, (k, v)) = fields.iter().next().expect("one entry");
    if !is_identifier(name) {
        cx.error(k.span, format!("`{name}` is not a valid identifier"));
        return None;
    }
    Some(ForClause {
        var: name.clone(),
        iterable: cx.expr(v, "for")?,
    })
}

fn parse_function(
    cx: &mut Ctx,
    node: &Node,
    params: &Node,
    ret: Option<&Node>,
) -> Option<BlockKind> {
    let mut out = IndexMap::new();
    let mut ok = true;
    match &params.kind {
        NodeKind::Map(pairs) => {
            for (name, (k, v)) in entries(cx, pairs) {
                if !is_identifier(&name) {
                    cx.error(k.span, format!("`{name}` is not a valid parameter name"));
                    ok = false;
                    continue;
                }
                match cx.type_expr(v) {
                    Some(t) => {
                        out.insert(name, t);
                    }
                    None => ok = false,
                }
            }
        }
        _ if params.to_value().is_null() => {}
        _ => {
            cx.error(params.span, "`function` must map parameter names to types");
            return None;
        }
    }
    let Some(ret) = ret else {
        cx.error(node.span, "`function` block needs a `return` body");
        return None;
    };
    let body = parse_block(cx, ret)?;
    ok.then(|| {
        BlockKind::Function(FunctionBlock {
            params: out,
            body: Box::new(body),
        })
    })
}

fn parse_call(cx: &mut Ctx, callee: &Node, args: Option<&Node>) -> Option<BlockKind> {
    let callee = cx.expr(callee, "call")?;
    let args = match args {
        None => Map::new(),
        Some(a) => match a.to_value() {
            Value::Object(m) => m,
            Value::Null => Map::new(),
            _ => {
                cx.error(a.span, "`args` must be a mapping");
                return None;
            }
        },
    };
    Some(BlockKind::Call { callee, args })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(src: &str) -> Result<Program, Vec<ParseDiagnostic>> {
        parse_program(src, Path::new("t.pdl"))
    }

    fn first_error(src: &str) -> String {
        parse(src).unwrap_err()[0].message.clone()
    }

    #[test]
    fn scalar_program_is_text() {
        let p = parse("\"hello\"").unwrap();
        assert_eq!(p.root, Block::text(vec![Block::literal("hello")]));
        assert!(p.defs.is_empty());
    }

    #[test]
    fn infer_examples() {
        assert_eq!(infer_block_kind(["content", "role"]), Ok("message"));
        assert_eq!(
            infer_block_kind(["model", "def", "parser", "spec"]),
            Ok("model")
        );
        assert_eq!(infer_block_kind([]), Err(KindError::NoKind));
        assert!(KindError::NoKind.to_string().starts_with("no block kind"));
    }

    #[test]
    fn envelope_keys_never_discriminate() {
        let keys = [
            "def",
            "spec",
            "role",
            "parser",
            "parameters",
            "input",
            "args",
            "description",
        ];
        assert_eq!(infer_block_kind(keys), Err(KindError::NoKind));
    }

    #[test]
    fn every_discriminator_pair_is_ambiguous() {
        for (i, (a, _)) in DISCRIMINATORS.iter().enumerate() {
            for (b, _) in &DISCRIMINATORS[i + 1..] {
                let err = infer_block_kind([*a, *b]).unwrap_err();
                assert!(
                    matches!(err, KindError::Ambiguous(ref ks) if ks.len() == 2),
                    "{a}+{b}"
                );
                assert!(err.to_string().starts_with("ambiguous block kind"));
            }
        }
    }

    #[test]
    fn ambiguous_mapping_is_reported() {
        assert!(first_error("text: a\nmodel: m\n").starts_with("ambiguous block kind"));
    }

    #[test]
    fn unknown_key_has_span() {
        let diags = parse("text:\n  - model: m\n    bogus: 1\n").unwrap_err();
        assert_eq!(diags[0].message, "unknown key `bogus` in model block");
        assert_eq!((diags[0].span.start_line, diags[0].span.start_col), (3, 5));
    }

    #[test]
    fn structural_errors() {
        assert_eq!(first_error("model: 3\n"), "`model` must be a string");
        assert_eq!(
            first_error("repeat: x\nuntil: done\nmaxIterations: 0\n"),
            "`maxIterations` must be at least 1"
        );
        assert!(first_error("a: [1,\n").starts_with("YAML syntax error"));
        assert_eq!(
            first_error("repeat: x\n"),
            "`repeat` needs `for`, `until` or both"
        );
    }

    #[test]
    fn defs_and_root() {
        let src = "description: demo\ndefs:\n  f:\n    function: {x: integer}\n    return: ${ x }\ntext:\n  - hi\n";
        let p = parse(src).unwrap();
        assert_eq!(p.description.as_deref(), Some("demo"));
        assert_eq!(p.defs["f"].kind_name(), "function");
        assert_eq!(p.root.kind_name(), "text");
    }

    #[test]
    fn for_clause_forms() {
        let a = parse("repeat: ${ i }\nfor: {i: \"${ [1,2,3] }\"}\n").unwrap();
        let b = parse("repeat: ${ i }\nfor: {var: i, in: \"${ [1,2,3] }\"}\n").unwrap();
        assert_eq!(a.root, b.root);
    }

    #[test]
    fn optional_record_field_parses() {
        let p = parse("data: 1\nspec: {object: {x: integer, y?: number}}\n").unwrap();
        assert_eq!(p.root.spec.unwrap().to_string(), "{x: integer, y?: number}");
    }

    #[test]
    fn diagnostic_display() {
        let d = &parse("{}").unwrap_err()[0];
        assert!(d.to_string().starts_with("t.pdl:1:1: error: no block kind"));
    }
}
