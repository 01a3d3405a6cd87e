//! YAML loading with source positions.
//!
//! Builds a small node tree from the event stream so that parse diagnostics
//! can point at the offending key or value.

use std::collections::HashMap;

use yaml_rust2::parser::{Event, MarkedEventReceiver, Parser, Tag};
use yaml_rust2::scanner::{Marker, TScalarStyle};

use crate::value::{Map, Value};

/// 1-based line/column position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub start: Pos,
    pub end: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Scalar {
        text: String,
        quoted: bool,
        tag: Option<String>,
    },
    Seq(Vec<Node>),
    Map(Vec<(Node, Node)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct YamlError {
    pub message: String,
    pub pos: Pos,
}

impl Node {
    fn null_at(pos: Pos) -> Node {
        Node {
            kind: NodeKind::Scalar {
                text: String::new(),
                quoted: false,
                tag: None,
            },
            span: Span {
                start: pos,
                end: pos,
            },
        }
    }

    pub fn as_map(&self) -> Option<&[(Node, Node)]> {
        match &self.kind {
            NodeKind::Map(entries) => Some(entries),
            _ => None,
        }
    }

    /// Scalar text if this node is a string-typed scalar.
    pub fn as_str(&self) -> Option<&str> {
        match self.to_value() {
            Value::String(_) => match &self.kind {
                NodeKind::Scalar { text, .. } => Some(text),
                _ => None,
            },
            _ => None,
        }
    }

    /// Raw scalar text regardless of its resolved type.
    pub fn scalar_text(&self) -> Option<&str> {
        match &self.kind {
            NodeKind::Scalar { text, .. } => Some(text),
            _ => None,
        }
    }

    pub fn to_value(&self) -> Value {
        match &self.kind {
            NodeKind::Scalar { text, quoted, tag } => resolve_scalar(text, *quoted, tag.as_deref()),
            NodeKind::Seq(items) => Value::Array(items.iter().map(Node::to_value).collect()),
            NodeKind::Map(entries) => {
                let mut map = Map::new();
                for (k, v) in entries {
                    map.insert(key_text(k), v.to_value());
                }
                Value::Object(map)
            }
        }
    }
}

/// Mapping keys are always treated as strings.
pub fn key_text(node: &Node) -> String {
    match &node.kind {
        NodeKind::Scalar { text, .. } => text.clone(),
        _ => crate::value::stringify(&node.to_value()),
    }
}

fn resolve_scalar(text: &str, quoted: bool, tag: Option<&str>) -> Value {
    match tag {
        Some("str") => return Value::String(text.to_string()),
        Some("int") => {
            if let Ok(i) = text.parse::<i64>() {
                return Value::Int(i);
            }
        }
        Some("float") => {
            if let Ok(f) = text.parse::<f64>() {
                return Value::Float(f);
            }
        }
        _ => {}
    }
    if quoted {
        return Value::String(text.to_string());
    }
    match text {
        "" | "~" | "null" | "Null" | "NULL" => return Value::Null,
        "true" | "True" | "TRUE" => return Value::Bool(true),
        "false" | "False" | "FALSE" => return Value::Bool(false),
        ".inf" | ".Inf" | ".INF" | "+.inf" => return Value::Float(f64::INFINITY),
        "-.inf" | "-.Inf" | "-.INF" => return Value::Float(f64::NEG_INFINITY),
        ".nan" | ".NaN" | ".NAN" => return Value::Float(f64::NAN),
        _ => {}
    }
    if is_int(text) {
        if let Ok(i) = text.parse::<i64>() {
            return Value::Int(i);
        }
        if let Ok(f) = text.parse::<f64>() {
            return Value::Float(f);
        }
    }
    if let Some(hex) = text.strip_prefix("0x") {
        if let Ok(i) = i64::from_str_radix(hex, 16) {
            return Value::Int(i);
        }
    }
    if let Some(oct) = text.strip_prefix("0o") {
        if let Ok(i) = i64::from_str_radix(oct, 8) {
            return Value::Int(i);
        }
    }
    if is_float(text) {
        if let Ok(f) = text.parse::<f64>() {
            return Value::Float(f);
        }
    }
    Value::String(text.to_string())
}

fn is_int(s: &str) -> bool {
    let digits = s.strip_prefix(['-', '+']).unwrap_or(s);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
}

fn is_float(s: &str) -> bool {
    let body = s.strip_prefix(['-', '+']).unwrap_or(s);
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(i) => (&body[..i], Some(&body[i + 1..])),
        None => (body, None),
    };
    let mantissa_ok = match mantissa.split_once('.') {
        Some((a, b)) => {
            (!a.is_empty() || !b.is_empty())
                && a.bytes().all(|c| c.is_ascii_digit())
                && b.bytes().all(|c| c.is_ascii_digit())
        }
        None => !mantissa.is_empty() && mantissa.bytes().all(|c| c.is_ascii_digit()),
    };
    let exponent_ok = exponent.is_none_or(is_int);
    mantissa_ok && exponent_ok
}

enum Partial {
    Seq(Vec<Node>),
    Map(Vec<(Node, Node)>, Option<Node>),
}

struct Frame {
    partial: Partial,
    start: Pos,
    anchor: usize,
}

#[derive(Default)]
struct Builder {
    end: Pos,
    stack: Vec<Frame>,
    documents: Vec<Node>,
    anchors: HashMap<usize, Node>,
    error: Option<YamlError>,
}

fn pos(mark: &Marker) -> Pos {
    Pos {
        line: mark.line().max(1),
        col: mark.col() + 1,
    }
}

fn tag_suffix(tag: &Option<Tag>) -> Option<String> {
    tag.as_ref().map(|t| t.suffix.clone())
}

impl Builder {
    fn push(&mut self, node: Node) {
        match self.stack.last_mut() {
            None => self.documents.push(node),
            Some(frame) => match &mut frame.partial {
                Partial::Seq(items) => items.push(node),
                Partial::Map(entries, pending) => match pending.take() {
                    None => *pending = Some(node),
                    Some(key) => entries.push((key, node)),
                },
            },
        }
    }
}

impl MarkedEventReceiver for Builder {
    fn on_event(&mut self, ev: Event, mark: Marker) {
        let here = pos(&mark).min(self.end);
        match ev {
            Event::Scalar(text, style, anchor, tag) => {
                let quoted = !matches!(style, TScalarStyle::Plain);
                let end = if text.contains('\n') || quoted {
                    here
                } else {
                    Pos {
                        line: here.line,
                        col: here.col + text.chars().count().saturating_sub(1),
                    }
                };
                let node = Node {
                    kind: NodeKind::Scalar {
                        text,
                        quoted,
                        tag: tag_suffix(&tag),
                    },
                    span: Span { start: here, end },
                };
                if anchor > 0 {
                    self.anchors.insert(anchor, node.clone());
                }
                self.push(node);
            }
            Event::SequenceStart(anchor, _) => self.stack.push(Frame {
                partial: Partial::Seq(Vec::new()),
                start: here,
                anchor,
            }),
            Event::MappingStart(anchor, _) => self.stack.push(Frame {
                partial: Partial::Map(Vec::new(), None),
                start: here,
                anchor,
            }),
            Event::SequenceEnd | Event::MappingEnd => {
                let Some(frame) = self.stack.pop() else {
                    return;
                };
                let kind = match frame.partial {
                    Partial::Seq(items) => NodeKind::Seq(items),
                    Partial::Map(entries, _) => NodeKind::Map(entries),
                };
                let end = if here < frame.start {
                    frame.start
                } else {
                    here
                };
                let node = Node {
                    kind,
                    span: Span {
                        start: frame.start,
                        end,
                    },
                };
                if frame.anchor > 0 {
                    self.anchors.insert(frame.anchor, node.clone());
                }
                self.push(node);
            }
            Event::Alias(id) => match self.anchors.get(&id).cloned() {
                Some(node) => self.push(node),
                None => {
                    self.error.get_or_insert(YamlError {
                        message: format!("unknown alias {id}"),
                        pos: here,
                    });
                    self.push(Node::null_at(here));
                }
            },
            Event::Nothing
            | Event::StreamStart
            | Event::StreamEnd
            | Event::DocumentStart
            | Event::DocumentEnd => {}
        }
    }
}

/// Loads a single-document YAML stream. Empty input yields a null node;
/// multi-document streams are rejected.
pub fn load(text: &str) -> Result<Node, YamlError> {
    let end = end_of(text);
    let mut builder = Builder {
        end,
        ..Builder::default()
    };
    let mut parser = Parser::new_from_str(text);
    parser.load(&mut builder, true).map_err(|e| YamlError {
        message: e.info().to_string(),
        pos: pos(e.marker()).min(end),
    })?;
    if let Some(err) = builder.error {
        return Err(err);
    }
    match builder.documents.len() {
        0 => Ok(Node::null_at(Pos { line: 1, col: 1 })),
        1 => Ok(builder.documents.remove(0)),
        n => Err(YamlError {
            message: format!("multi-document YAML streams are not supported ({n} documents)"),
            pos: builder.documents[1].span.start,
        }),
    }
}

/// Position just past the last character; markers reported at end of
/// input can lie beyond it.
fn end_of(text: &str) -> Pos {
    let last = text.rsplit('\n').next().unwrap_or("");
    Pos {
        line: text.split('\n').count(),
        col: last.chars().count() + 1,
    }
}

/// Loads YAML straight to a [`Value`].
pub fn load_value(text: &str) -> Result<Value, YamlError> {
    load(text).map(|n| n.to_value())
}
