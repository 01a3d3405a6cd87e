//! Turning model text into an [`ActionSpec`].
//!
//! [`strict_parse_action`] accepts only the canonical shape.
//! [`repair_action`] also tolerates alternative key spellings, tool-name
//! case and unique prefixes, and missing arguments.

use serde::{Deserialize, Serialize};

use crate::eval::strip_fence;
use crate::value::{Map, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ActionSpec {
    pub tool_name: String,
    pub arguments: Map,
}

impl ActionSpec {
    pub fn new(tool_name: impl Into<String>, arguments: Map) -> Self {
        ActionSpec {
            tool_name: tool_name.into(),
            arguments,
        }
    }

    /// Canonical wire form: `{"name": ..., "arguments": {...}}`.
    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("name".into(), Value::from(self.tool_name.as_str()));
        m.insert("arguments".into(), Value::Object(self.arguments.clone()));
        Value::Object(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    ParseError,
    UnknownTool,
    NoTool,
    ToolError,
}

impl FailureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::ParseError => "parse_error",
            FailureKind::UnknownTool => "unknown_tool",
            FailureKind::NoTool => "no_tool",
            FailureKind::ToolError => "tool_error",
        }
    }
}

pub const NAME_KEYS: [&str; 4] = ["name", "tool_name", "tool", "action"];
pub const ARGUMENT_KEYS: [&str; 4] = ["arguments", "args", "parameters", "input"];

/// End (exclusive) of the balanced bracket group starting at `start`.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (off, ch) in text[start..].char_indices() {
        if in_string {
            match ch {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_string = true,
            '{' | '[' => depth += 1,
            '}' | ']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(start + off + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Outcome of looking for JSON inside free text.
#[derive(Debug, Clone, PartialEq)]
pub enum Extracted {
    /// The first balanced object/array that parses, with its byte offset.
    Json { value: Value, start: usize },
    /// Brackets were present but nothing parsed.
    Unparseable,
    /// No `{` or `[` at all.
    Absent,
}

/// Finds the first balanced JSON object or array in `raw`, fence-stripped.
///
/// Candidates are tried left to right. A bracket group that never closes
/// stops the search, so text nested inside it is never picked.
pub fn extract_json(raw: &str) -> Extracted {
    let text = strip_fence(raw);
    let offset = raw.find(text).unwrap_or(0);
    let mut from = 0;
    let mut saw_bracket = false;
    while let Some(rel) = text[from..].find(['{', '[']) {
        saw_bracket = true;
        let start = from + rel;
        let Some(end) = balanced_end(text, start) else {
            return Extracted::Unparseable;
        };
        if let Ok(value) = Value::from_json_str(&text[start..end]) {
            return Extracted::Json {
                value,
                start: offset + start,
            };
        }
        from = end;
    }
    if saw_bracket {
        Extracted::Unparseable
    } else {
        Extracted::Absent
    }
}

fn first_action(value: Value) -> Option<Map> {
    match value {
        Value::Object(m) => Some(m),
        Value::Array(items) => match items.into_iter().next() {
            Some(Value::Object(m)) => Some(m),
            _ => None,
        },
        _ => None,
    }
}

fn extract_action(raw: &str) -> Result<Map, FailureKind> {
    match extract_json(raw) {
        Extracted::Json { value, .. } => first_action(value).ok_or(FailureKind::ParseError),
        Extracted::Unparseable => Err(FailureKind::ParseError),
        Extracted::Absent => Err(FailureKind::NoTool),
    }
}

/// Accepts exactly `{"name": <registered tool>, "arguments": {...}}`
/// (or a list whose first element is that).
pub fn strict_parse_action<S: AsRef<str>>(
    raw: &str,
    tools: &[S],
) -> Result<ActionSpec, FailureKind> {
    let obj = extract_action(raw)?;
    if obj.len() != 2 {
        return Err(FailureKind::ParseError);
    }
    let (Some(Value::String(name)), Some(Value::Object(args))) =
        (obj.get("name"), obj.get("arguments"))
    else {
        return Err(FailureKind::ParseError);
    };
    if !tools.iter().any(|t| t.as_ref() == name) {
        return Err(FailureKind::UnknownTool);
    }
    Ok(ActionSpec::new(name.clone(), args.clone()))
}

/// Registry lookup: exact, then case-insensitive, then unique prefix.
pub fn match_tool<'a, S: AsRef<str>>(name: &str, tools: &'a [S]) -> Option<&'a str> {
    if name.is_empty() {
        return None;
    }
    if let Some(t) = tools.iter().find(|t| t.as_ref() == name) {
        return Some(t.as_ref());
    }
    let lower = name.to_lowercase();
    let folded: Vec<&str> = tools
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| t.to_lowercase() == lower)
        .collect();
    if let [only] = folded.as_slice() {
        return Some(only);
    }
    let prefixed: Vec<&str> = tools
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| t.to_lowercase().starts_with(&lower))
        .collect();
    match prefixed.as_slice() {
        [only] => Some(only),
        _ => None,
    }
}

/// Lenient counterpart of [`strict_parse_action`]; never panics.
pub fn repair_action<S: AsRef<str>>(raw: &str, tools: &[S]) -> Result<ActionSpec, FailureKind> {
    let obj = extract_action(raw)?;
    let name = NAME_KEYS
        .iter()
        .find_map(|k| obj.get(*k))
        .ok_or(FailureKind::ParseError)?;
    let Value::String(name) = name else {
        return Err(FailureKind::ParseError);
    };
    let arguments = match ARGUMENT_KEYS.iter().find_map(|k| obj.get(*k)) {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err(FailureKind::ParseError),
    };
    let tool = match_tool(name, tools).ok_or(FailureKind::UnknownTool)?;
    Ok(ActionSpec::new(tool, arguments))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOOLS: [&str; 2] = ["search", "finish"];

    fn args(json: &str) -> Map {
        Value::from_json_str(json)
            .unwrap()
            .as_object()
            .unwrap()
            .clone()
    }

    #[test]
    fn bare_name_repairs() {
        assert_eq!(
            repair_action(r#"{"name": "abc"}"#, &["abc"]),
            Ok(ActionSpec::new("abc", Map::new()))
        );
    }

    #[test]
    fn prose_is_no_tool() {
        assert_eq!(
            repair_action("I will now search.", &TOOLS),
            Err(FailureKind::NoTool)
        );
        assert_eq!(
            strict_parse_action("I will now search.", &TOOLS),
            Err(FailureKind::NoTool)
        );
    }

    #[test]
    fn full_pipeline() {
        let raw = "Thought: ok\n[{\"tool\": \"SEARCH\", \"args\": {\"topic\": \"x\"}}]";
        assert_eq!(
            repair_action(raw, &TOOLS),
            Ok(ActionSpec::new("search", args(r#"{"topic": "x"}"#)))
        );
        assert_eq!(
            strict_parse_action(raw, &TOOLS),
            Err(FailureKind::ParseError)
        );
    }

    #[test]
    fn wrong_key_spelling_is_normalized() {
        let raw = r#"{"tool_name": "search", "args": {"topic": "t"}}"#;
        assert_eq!(repair_action(raw, &TOOLS).unwrap().tool_name, "search");
    }

    #[test]
    fn truncated_json_is_a_parse_error() {
        let raw = r#"{"name": "lookup", "arguments": {"name": "search"}"#;
        assert_eq!(
            repair_action(raw, &["lookup", "search"]),
            Err(FailureKind::ParseError)
        );
    }

    #[test]
    fn unknown_and_ambiguous_tools() {
        assert_eq!(
            repair_action(r#"{"name": "frobnicate"}"#, &TOOLS),
            Err(FailureKind::UnknownTool)
        );
        assert_eq!(
            repair_action(r#"{"name": "se"}"#, &TOOLS)
                .unwrap()
                .tool_name,
            "search"
        );
        assert_eq!(
            repair_action(r#"{"name": "s"}"#, &["search", "summarize"]),
            Err(FailureKind::UnknownTool)
        );
        assert_eq!(
            repair_action(r#"{"name": ""}"#, &TOOLS),
            Err(FailureKind::UnknownTool)
        );
    }

    #[test]
    fn skips_non_json_brackets() {
        let raw = "I'll use [search] now: {\"name\": \"search\", \"arguments\": {}}";
        assert_eq!(
            strict_parse_action(raw, &TOOLS).unwrap().tool_name,
            "search"
        );
    }

    #[test]
    fn fenced_output() {
        let raw = "```json\n{\"name\": \"finish\", \"arguments\": {\"answer\": \"42\"}}\n```";
        assert_eq!(
            strict_parse_action(raw, &TOOLS).unwrap().arguments["answer"],
            Value::from("42")
        );
    }
}
